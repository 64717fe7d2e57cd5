#include "ganet/checkpoint.hpp"

#include <cstring>
#include <fstream>

#include <json.hpp>

namespace ganet {

namespace {

constexpr char kMagic[8] = {'G', 'A', 'N', 'E', 'T', 'C', 'K', 'P'};
constexpr std::uint32_t kFormatVersion = 1;

nlohmann::json config_to_json(const NetworkConfig& c) {
  nlohmann::json j;
  j["backbone"] = to_string(c.backbone_depth);
  j["num_classes"] = c.num_classes;
  j["in_channels"] = c.in_channels;
  j["aspp_rates"] = c.aspp_rates;
  j["decoder_channels"] = c.decoder_channels;
  j["gac_embed_channels"] = c.gac_embed_channels;
  j["low_level_channels"] = c.low_level_channels;
  j["patch_size"] = c.patch_size;
  j["fusion"] = to_string(c.fusion);
  j["gac_normalization"] = to_string(c.gac_normalization);
  j["bn_momentum"] = c.bn_momentum;
  j["bn_eps"] = c.bn_eps;
  return j;
}

NetworkConfig config_from_json(const nlohmann::json& j) {
  NetworkConfig c;
  c.backbone_depth = backbone_from_string(j.at("backbone").get<std::string>());
  c.num_classes = j.at("num_classes").get<int>();
  c.in_channels = j.at("in_channels").get<int>();
  c.aspp_rates = j.at("aspp_rates").get<std::vector<int>>();
  c.decoder_channels = j.at("decoder_channels").get<int>();
  c.gac_embed_channels = j.at("gac_embed_channels").get<int>();
  c.low_level_channels = j.at("low_level_channels").get<int>();
  c.patch_size = j.at("patch_size").get<int>();
  c.fusion = fusion_from_string(j.at("fusion").get<std::string>());
  c.gac_normalization = gac_normalization_from_string(j.at("gac_normalization").get<std::string>());
  c.bn_momentum = j.at("bn_momentum").get<double>();
  c.bn_eps = j.at("bn_eps").get<double>();
  return c;
}

void append_blob(std::vector<double>& blob, nlohmann::json& index, const std::string& kind,
                 const std::string& name, const double* data, std::size_t count) {
  nlohmann::json entry;
  entry["kind"] = kind;
  entry["name"] = name;
  entry["offset"] = blob.size();
  entry["count"] = count;
  index.push_back(entry);
  blob.insert(blob.end(), data, data + count);
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const GANetModel& model,
                     const std::vector<double>& input_mean,
                     const std::vector<double>& input_stddev, const TrainerState* trainer_state) {
  nlohmann::json header;
  header["format_version"] = kFormatVersion;
  header["config"] = config_to_json(model.config());
  header["input_mean"] = input_mean;
  header["input_stddev"] = input_stddev;

  std::vector<double> blob;
  nlohmann::json index = nlohmann::json::array();
  for (const auto& p : model.named_parameters())
    append_blob(blob, index, "param", p.name, p.tensor.data(),
                static_cast<std::size_t>(p.tensor.numel()));
  for (const auto& b : model.named_buffers())
    append_blob(blob, index, "buffer", b.name, b.values->data(), b.values->size());
  if (trainer_state) {
    nlohmann::json t;
    t["global_step"] = trainer_state->global_step;
    t["epoch"] = trainer_state->epoch;
    t["best_val_f1"] = trainer_state->best_val_f1;
    header["trainer"] = t;
    for (const auto& [name, velocity] : trainer_state->momentum)
      append_blob(blob, index, "momentum", name, velocity.data(), velocity.size());
  }
  header["tensors"] = index;

  const std::string header_str = header.dump();
  std::ofstream out(path, std::ios::binary);
  GANET_CHECK(out.good(), DataError, "cannot write checkpoint '", path.string(), "'");
  out.write(kMagic, sizeof kMagic);
  const std::uint32_t version = kFormatVersion;
  out.write(reinterpret_cast<const char*>(&version), sizeof version);
  const std::uint64_t header_len = header_str.size();
  out.write(reinterpret_cast<const char*>(&header_len), sizeof header_len);
  out.write(header_str.data(), static_cast<std::streamsize>(header_str.size()));
  out.write(reinterpret_cast<const char*>(blob.data()),
            static_cast<std::streamsize>(blob.size() * sizeof(double)));
  GANET_CHECK(out.good(), DataError, "failed writing checkpoint '", path.string(), "'");
}

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  GANET_CHECK(in.good(), DataError, "cannot open checkpoint '", path.string(), "'");
  char magic[8];
  in.read(magic, sizeof magic);
  GANET_CHECK(in.good() && std::memcmp(magic, kMagic, sizeof kMagic) == 0, DataError, "'",
              path.string(), "' is not a ganet checkpoint");
  std::uint32_t version = 0;
  in.read(reinterpret_cast<char*>(&version), sizeof version);
  GANET_CHECK(version == kFormatVersion, DataError, "checkpoint format version ", version,
              " unsupported (expected ", kFormatVersion, ")");
  std::uint64_t header_len = 0;
  in.read(reinterpret_cast<char*>(&header_len), sizeof header_len);
  std::string header_str(header_len, '\0');
  in.read(header_str.data(), static_cast<std::streamsize>(header_len));
  GANET_CHECK(in.good(), DataError, "truncated checkpoint header in '", path.string(), "'");
  const nlohmann::json header = nlohmann::json::parse(header_str);

  LoadedCheckpoint out;
  const NetworkConfig config = config_from_json(header.at("config"));
  Rng init_rng(0);  // parameters are overwritten below
  out.model = build_network(config, init_rng);
  out.input_mean = header.at("input_mean").get<std::vector<double>>();
  out.input_stddev = header.at("input_stddev").get<std::vector<double>>();

  std::vector<double> blob;
  {
    std::vector<char> raw((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    GANET_CHECK(raw.size() % sizeof(double) == 0, DataError, "checkpoint blob misaligned");
    blob.resize(raw.size() / sizeof(double));
    std::memcpy(blob.data(), raw.data(), raw.size());
  }

  std::map<std::string, Tensor> params;
  for (auto& p : out.model->named_parameters()) params.emplace(p.name, p.tensor);
  std::map<std::string, std::vector<double>*> buffers;
  for (auto& b : out.model->named_buffers()) buffers.emplace(b.name, b.values);

  std::size_t params_seen = 0, buffers_seen = 0;
  for (const auto& entry : header.at("tensors")) {
    const std::string kind = entry.at("kind").get<std::string>();
    const std::string name = entry.at("name").get<std::string>();
    const std::size_t offset = entry.at("offset").get<std::size_t>();
    const std::size_t count = entry.at("count").get<std::size_t>();
    GANET_CHECK(offset + count <= blob.size(), DataError, "checkpoint blob too small for '",
                name, "'");
    const double* src = blob.data() + offset;
    if (kind == "param") {
      auto it = params.find(name);
      GANET_CHECK(it != params.end(), DataError, "checkpoint parameter '", name,
                  "' does not exist in the rebuilt network");
      GANET_CHECK(static_cast<std::size_t>(it->second.numel()) == count, DataError,
                  "checkpoint parameter '", name, "' has wrong size");
      std::copy_n(src, count, it->second.data());
      ++params_seen;
    } else if (kind == "buffer") {
      auto it = buffers.find(name);
      GANET_CHECK(it != buffers.end(), DataError, "checkpoint buffer '", name, "' unknown");
      GANET_CHECK(it->second->size() == count, DataError, "checkpoint buffer '", name,
                  "' has wrong size");
      std::copy_n(src, count, it->second->data());
      ++buffers_seen;
    } else if (kind == "momentum") {
      out.trainer_state.momentum[name] = std::vector<double>(src, src + count);
    } else {
      GANET_THROW(DataError, "checkpoint tensor kind '", kind, "' unknown");
    }
  }
  GANET_CHECK(params_seen == params.size(), DataError, "checkpoint is missing ",
              params.size() - params_seen, " parameters");
  GANET_CHECK(buffers_seen == buffers.size(), DataError, "checkpoint is missing buffers");

  if (header.contains("trainer")) {
    out.has_trainer_state = true;
    out.trainer_state.global_step = header["trainer"].at("global_step").get<std::int64_t>();
    out.trainer_state.epoch = header["trainer"].at("epoch").get<int>();
    out.trainer_state.best_val_f1 = header["trainer"].at("best_val_f1").get<double>();
  }
  return out;
}

}  // namespace ganet
