#include "ganet/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

#include "ganet/raster_io.hpp"

namespace ganet {

namespace fs = std::filesystem;

GeoRaster load_tile(const fs::path& optical_path, const std::optional<fs::path>& dsm_path,
                    const std::optional<fs::path>& label_path, const ColorMap& colors) {
  const PnmImage optical = read_pnm(optical_path);
  GeoRaster raster(optical.height, optical.width);
  raster.id = optical_path.stem().string();
  const double inv_max = 1.0 / static_cast<double>(optical.maxval);
  for (int c = 0; c < optical.channels; ++c) {
    std::vector<double> plane(static_cast<std::size_t>(raster.pixels()));
    for (std::int64_t i = 0; i < raster.pixels(); ++i)
      plane[static_cast<std::size_t>(i)] =
          optical.pixels[static_cast<std::size_t>(i) * optical.channels + c] * inv_max;
    raster.add_channel(ChannelRole::kOpticalBand, std::move(plane));
  }

  if (dsm_path) {
    const PfmImage dsm = read_pfm(*dsm_path);
    GANET_CHECK(dsm.height == raster.height() && dsm.width == raster.width(), DataError,
                "DSM '", dsm_path->string(), "' is ", dsm.height, "x", dsm.width,
                " but optical raster is ", raster.height(), "x", raster.width());
    std::vector<double> plane(dsm.pixels.begin(), dsm.pixels.end());
    raster.add_channel(ChannelRole::kHeight, std::move(plane));
  }

  if (label_path) {
    const PnmImage labels = read_pnm(*label_path);
    GANET_CHECK(labels.height == raster.height() && labels.width == raster.width(), DataError,
                "label raster '", label_path->string(), "' is ", labels.height, "x", labels.width,
                " but optical raster is ", raster.height(), "x", raster.width());
    std::vector<double> plane(static_cast<std::size_t>(raster.pixels()));
    if (labels.channels == 3) {
      for (std::int64_t i = 0; i < raster.pixels(); ++i) {
        const auto r = static_cast<std::uint8_t>(labels.pixels[static_cast<std::size_t>(i) * 3]);
        const auto g =
            static_cast<std::uint8_t>(labels.pixels[static_cast<std::size_t>(i) * 3 + 1]);
        const auto b =
            static_cast<std::uint8_t>(labels.pixels[static_cast<std::size_t>(i) * 3 + 2]);
        const auto cls = colors.class_of(r, g, b);
        GANET_CHECK(cls.has_value(), DataError, "label raster '", label_path->string(),
                    "': color (", int(r), ",", int(g), ",", int(b),
                    ") does not appear in the color map");
        plane[static_cast<std::size_t>(i)] = static_cast<double>(*cls);
      }
    } else {
      for (std::int64_t i = 0; i < raster.pixels(); ++i) {
        const int cls = labels.pixels[static_cast<std::size_t>(i)];
        GANET_CHECK(cls < colors.num_classes(), DataError, "label raster '",
                    label_path->string(), "': id ", cls, " outside the ", colors.num_classes(),
                    "-class map");
        plane[static_cast<std::size_t>(i)] = static_cast<double>(cls);
      }
    }
    raster.add_channel(ChannelRole::kLabel, std::move(plane));
  }
  return raster;
}

GeoRaster normalize_height(const GeoRaster& raster) {
  const auto hc = raster.find_channel(ChannelRole::kHeight);
  GANET_CHECK(hc.has_value(), DataError, "normalize_height: raster '", raster.id,
              "' has no height channel");
  GeoRaster out = raster;
  auto& plane = out.plane(*hc);
  const auto [mn_it, mx_it] = std::minmax_element(plane.begin(), plane.end());
  const double mn = *mn_it, mx = *mx_it;
  if (mx == mn) {
    std::fill(plane.begin(), plane.end(), 0.0);
  } else {
    const double inv = 1.0 / (mx - mn);
    for (auto& v : plane) v = (v - mn) * inv;
  }
  return out;
}

std::pair<std::int64_t, std::int64_t> draw_patch_origin(std::int64_t tile_h, std::int64_t tile_w,
                                                        std::int64_t patch_size, Rng& rng) {
  GANET_CHECK(patch_size >= 1, ConfigError, "patch size must be positive");
  GANET_CHECK(patch_size <= tile_h && patch_size <= tile_w, ShapeError, "patch size ",
              patch_size, " exceeds tile extent ", tile_h, "x", tile_w);
  return {rng.uniform_int(0, tile_h - patch_size), rng.uniform_int(0, tile_w - patch_size)};
}

PatchSample sample_patch(const GeoRaster& raster, std::int64_t patch_size, Rng& rng) {
  const auto [row, col] = draw_patch_origin(raster.height(), raster.width(), patch_size, rng);
  const GeoRaster crop = raster.crop(row, col, patch_size, patch_size);

  PatchSample sample;
  sample.source_tile_id = raster.id;
  sample.origin_row = row;
  sample.origin_col = col;
  const int optical = crop.optical_count();
  GANET_CHECK(optical >= 1, DataError, "sample_patch: tile has no optical channels");
  sample.image = Tensor({optical, patch_size, patch_size});
  int out_c = 0;
  for (int c = 0; c < crop.channel_count(); ++c) {
    if (crop.role(c) != ChannelRole::kOpticalBand) continue;
    std::copy(crop.plane(c).begin(), crop.plane(c).end(),
              sample.image.data() + out_c * patch_size * patch_size);
    ++out_c;
  }
  if (auto lc = crop.find_channel(ChannelRole::kLabel)) {
    sample.labels = IntTensor({patch_size, patch_size});
    const auto& plane = crop.plane(*lc);
    for (std::size_t i = 0; i < plane.size(); ++i)
      sample.labels.data[i] = static_cast<std::int32_t>(std::llround(plane[i]));
  }
  if (auto hc = crop.find_channel(ChannelRole::kHeight)) {
    sample.height = Tensor({patch_size, patch_size}, crop.plane(*hc));
  }
  return sample;
}

namespace {

void flip_plane_horizontal(double* data, std::int64_t h, std::int64_t w) {
  for (std::int64_t r = 0; r < h; ++r) std::reverse(data + r * w, data + (r + 1) * w);
}

void flip_plane_vertical(double* data, std::int64_t h, std::int64_t w) {
  for (std::int64_t r = 0; r < h / 2; ++r)
    std::swap_ranges(data + r * w, data + (r + 1) * w, data + (h - 1 - r) * w);
}

template <typename T>
void flip_int_plane(std::vector<T>& data, std::int64_t h, std::int64_t w, bool horizontal) {
  if (horizontal) {
    for (std::int64_t r = 0; r < h; ++r)
      std::reverse(data.begin() + r * w, data.begin() + (r + 1) * w);
  } else {
    for (std::int64_t r = 0; r < h / 2; ++r)
      std::swap_ranges(data.begin() + r * w, data.begin() + (r + 1) * w,
                       data.begin() + (h - 1 - r) * w);
  }
}

}  // namespace

PatchSample apply_flips(PatchSample patch, bool horizontal, bool vertical) {
  if (!horizontal && !vertical) return patch;
  // Tensors are shared handles; detach from the caller's buffers before
  // flipping in place.
  patch.image = patch.image.clone();
  if (patch.height.defined()) patch.height = patch.height.clone();
  const std::int64_t h = patch.image.dim(1), w = patch.image.dim(2);
  const std::int64_t channels = patch.image.dim(0);
  if (horizontal) {
    for (std::int64_t c = 0; c < channels; ++c)
      flip_plane_horizontal(patch.image.data() + c * h * w, h, w);
    if (patch.labels.numel() > 0) flip_int_plane(patch.labels.data, h, w, true);
    if (patch.height.defined()) flip_plane_horizontal(patch.height.data(), h, w);
  }
  if (vertical) {
    for (std::int64_t c = 0; c < channels; ++c)
      flip_plane_vertical(patch.image.data() + c * h * w, h, w);
    if (patch.labels.numel() > 0) flip_int_plane(patch.labels.data, h, w, false);
    if (patch.height.defined()) flip_plane_vertical(patch.height.data(), h, w);
  }
  return patch;
}

PatchSample augment(PatchSample patch, Rng& rng) {
  const bool horizontal = rng.bernoulli(0.5);
  const bool vertical = rng.bernoulli(0.5);
  return apply_flips(std::move(patch), horizontal, vertical);
}

ClassWeights compute_class_weights(const std::vector<GeoRaster>& label_rasters, int num_classes,
                                   std::int32_t ignore_class) {
  GANET_CHECK(num_classes >= 1, ConfigError, "compute_class_weights: num_classes must be >= 1");
  std::vector<std::uint64_t> counts(static_cast<std::size_t>(num_classes), 0);
  for (const auto& raster : label_rasters) {
    const auto lc = raster.find_channel(ChannelRole::kLabel);
    GANET_CHECK(lc.has_value(), DataError, "compute_class_weights: tile '", raster.id,
                "' has no label channel");
    for (double v : raster.plane(*lc)) {
      const auto cls = static_cast<std::int32_t>(std::llround(v));
      if (cls == ignore_class) continue;
      GANET_CHECK(cls >= 0 && cls < num_classes, DataError,
                  "compute_class_weights: label ", cls, " outside [0, ", num_classes - 1, "]");
      ++counts[static_cast<std::size_t>(cls)];
    }
  }
  std::uint64_t total = 0;
  std::string missing;
  for (int c = 0; c < num_classes; ++c) {
    if (counts[static_cast<std::size_t>(c)] == 0) missing += (missing.empty() ? "" : ", ") + std::to_string(c);
    total += counts[static_cast<std::size_t>(c)];
  }
  GANET_CHECK(missing.empty(), DataError,
              "compute_class_weights: no labeled pixels for classes [", missing, "]");
  // w_c = 1 / (K * freq_c); then sum_c freq_c * w_c == 1.
  ClassWeights out;
  out.weights.resize(static_cast<std::size_t>(num_classes));
  for (int c = 0; c < num_classes; ++c)
    out.weights[static_cast<std::size_t>(c)] =
        static_cast<double>(total) /
        (static_cast<double>(num_classes) * static_cast<double>(counts[static_cast<std::size_t>(c)]));
  return out;
}

namespace {

std::string trim(const std::string& s) {
  const auto begin = s.find_first_not_of(" \t\r\n");
  if (begin == std::string::npos) return "";
  const auto end = s.find_last_not_of(" \t\r\n");
  return s.substr(begin, end - begin + 1);
}

std::vector<std::string> split_ws(const std::string& s) {
  std::vector<std::string> out;
  std::istringstream is(s);
  std::string tok;
  while (is >> tok) out.push_back(tok);
  return out;
}

std::string substitute_id(const std::string& pattern, const std::string& id) {
  const auto pos = pattern.find("{id}");
  GANET_CHECK(pos != std::string::npos, ConfigError, "manifest pattern '", pattern,
              "' lacks an {id} placeholder");
  std::string out = pattern;
  out.replace(pos, 4, id);
  return out;
}

}  // namespace

DatasetManifest DatasetManifest::load(const fs::path& path) {
  std::ifstream in(path);
  GANET_CHECK(in.good(), DataError, "cannot open dataset manifest '", path.string(), "'");
  std::map<std::string, std::string> kv;
  std::string line;
  while (std::getline(in, line)) {
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    const auto eq = t.find('=');
    GANET_CHECK(eq != std::string::npos, DataError, "manifest '", path.string(),
                "': malformed line '", t, "'");
    kv[trim(t.substr(0, eq))] = trim(t.substr(eq + 1));
  }

  DatasetManifest m;
  if (kv.count("name")) m.name = kv["name"];
  GANET_CHECK(kv.count("num_classes"), DataError, "manifest missing num_classes");
  m.num_classes = std::stoi(kv["num_classes"]);
  GANET_CHECK(m.num_classes >= 2, DataError, "manifest num_classes must be >= 2");
  if (kv.count("ignore_class") && kv["ignore_class"] != "none")
    m.ignore_class = std::stoi(kv["ignore_class"]);

  std::vector<std::array<std::uint8_t, 3>> colors;
  for (int c = 0; c < m.num_classes; ++c) {
    const std::string key = "color." + std::to_string(c);
    if (!kv.count(key)) {
      GANET_CHECK(colors.empty(), DataError, "manifest defines colors for some classes but not ",
                  key);
      break;
    }
    int r, g, b;
    char comma;
    std::istringstream is(kv[key]);
    is >> r >> comma >> g >> comma >> b;
    GANET_CHECK(!is.fail(), DataError, "manifest ", key, ": malformed color '", kv[key], "'");
    colors.push_back({static_cast<std::uint8_t>(r), static_cast<std::uint8_t>(g),
                      static_cast<std::uint8_t>(b)});
  }
  m.color_map = colors.empty() ? ColorMap::isprs_subset(std::min(m.num_classes, 6))
                               : ColorMap(std::move(colors));
  GANET_CHECK(m.color_map.num_classes() >= m.num_classes, DataError,
              "manifest color map has fewer entries than num_classes");

  GANET_CHECK(kv.count("optical_pattern"), DataError, "manifest missing optical_pattern");
  const std::string optical_pattern = kv["optical_pattern"];
  const std::string dsm_pattern = kv.count("dsm_pattern") ? kv["dsm_pattern"] : "";
  const std::string label_pattern = kv.count("label_pattern") ? kv["label_pattern"] : "";

  const fs::path root = path.parent_path();
  auto parse_split = [&](const std::string& key, std::vector<TileEntry>& out) {
    if (!kv.count(key)) return;
    for (const auto& id : split_ws(kv[key])) {
      TileEntry e;
      e.id = id;
      e.optical = root / substitute_id(optical_pattern, id);
      if (!dsm_pattern.empty() && dsm_pattern != "none")
        e.dsm = root / substitute_id(dsm_pattern, id);
      if (!label_pattern.empty() && label_pattern != "none")
        e.label = root / substitute_id(label_pattern, id);
      out.push_back(std::move(e));
    }
  };
  parse_split("split.train", m.train);
  parse_split("split.val", m.val);
  parse_split("split.test", m.test);
  GANET_CHECK(!m.train.empty() || !m.val.empty() || !m.test.empty(), DataError,
              "manifest '", path.string(), "' declares no tiles");
  return m;
}

void DatasetManifest::save(const fs::path& path, const std::string& optical_pattern,
                           const std::string& dsm_pattern,
                           const std::string& label_pattern) const {
  std::ofstream out(path);
  GANET_CHECK(out.good(), DataError, "cannot write manifest '", path.string(), "'");
  out << "# ganet dataset manifest\n";
  out << "name = " << name << "\n";
  out << "num_classes = " << num_classes << "\n";
  out << "ignore_class = ";
  if (ignore_class < 0)
    out << "none\n";
  else
    out << ignore_class << "\n";
  for (int c = 0; c < color_map.num_classes(); ++c) {
    const auto rgb = color_map.color_of(c);
    out << "color." << c << " = " << int(rgb[0]) << "," << int(rgb[1]) << "," << int(rgb[2])
        << "\n";
  }
  out << "optical_pattern = " << optical_pattern << "\n";
  if (!dsm_pattern.empty()) out << "dsm_pattern = " << dsm_pattern << "\n";
  if (!label_pattern.empty()) out << "label_pattern = " << label_pattern << "\n";
  auto dump_split = [&](const char* key, const std::vector<TileEntry>& tiles) {
    if (tiles.empty()) return;
    out << "split." << key << " =";
    for (const auto& t : tiles) out << " " << t.id;
    out << "\n";
  };
  dump_split("train", train);
  dump_split("val", val);
  dump_split("test", test);
  GANET_CHECK(out.good(), DataError, "failed writing manifest '", path.string(), "'");
}

const std::vector<TileEntry>& DatasetManifest::split(const std::string& name) const {
  if (name == "train") return train;
  if (name == "val") return val;
  if (name == "test") return test;
  GANET_THROW(ConfigError, "unknown split '", name, "' (expected train|val|test)");
}

std::vector<GeoRaster> load_split(const DatasetManifest& manifest, const std::string& split,
                                  bool normalize_heights) {
  std::vector<GeoRaster> tiles;
  for (const auto& entry : manifest.split(split)) {
    GeoRaster tile = load_tile(entry.optical, entry.dsm, entry.label, manifest.color_map);
    tile.id = entry.id;
    if (normalize_heights && tile.find_channel(ChannelRole::kHeight))
      tile = normalize_height(tile);
    tiles.push_back(std::move(tile));
  }
  return tiles;
}

OpticalStats compute_optical_stats(const std::vector<GeoRaster>& tiles) {
  GANET_CHECK(!tiles.empty(), DataError, "compute_optical_stats: no tiles");
  const int channels = tiles.front().optical_count();
  GANET_CHECK(channels >= 1, DataError, "compute_optical_stats: tiles have no optical channels");
  OpticalStats stats;
  stats.mean.assign(static_cast<std::size_t>(channels), 0.0);
  stats.stddev.assign(static_cast<std::size_t>(channels), 0.0);
  std::vector<double> sq(static_cast<std::size_t>(channels), 0.0);
  std::uint64_t count = 0;
  for (const auto& tile : tiles) {
    GANET_CHECK(tile.optical_count() == channels, DataError,
                "compute_optical_stats: inconsistent optical channel counts");
    int oc = 0;
    for (int c = 0; c < tile.channel_count(); ++c) {
      if (tile.role(c) != ChannelRole::kOpticalBand) continue;
      for (double v : tile.plane(c)) {
        stats.mean[static_cast<std::size_t>(oc)] += v;
        sq[static_cast<std::size_t>(oc)] += v * v;
      }
      ++oc;
    }
    count += static_cast<std::uint64_t>(tile.pixels());
  }
  for (int c = 0; c < channels; ++c) {
    const double n = static_cast<double>(count);
    stats.mean[static_cast<std::size_t>(c)] /= n;
    const double var =
        std::max(0.0, sq[static_cast<std::size_t>(c)] / n -
                          stats.mean[static_cast<std::size_t>(c)] *
                              stats.mean[static_cast<std::size_t>(c)]);
    // Guard against degenerate flat channels.
    stats.stddev[static_cast<std::size_t>(c)] = std::max(std::sqrt(var), 1e-6);
  }
  return stats;
}

}  // namespace ganet
