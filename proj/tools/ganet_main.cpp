// ganet: dataset synthesis, training, tiled prediction, evaluation and
// ablation sweeps for the geometry-aware segmentation network.

#include <chrono>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>
#include <json.hpp>

#include "ganet/checkpoint.hpp"
#include "ganet/inference.hpp"
#include "ganet/metrics.hpp"
#include "ganet/objective.hpp"
#include "ganet/raster_io.hpp"
#include "ganet/synthetic.hpp"
#include "ganet/trainer.hpp"
#include "ganet/version.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr const char* kOutRootEnv = "GANET_OUT_ROOT";

struct CommonOpts {
  std::string out;
  bool overwrite = false;
};

// Warn (stderr) when a scalar flag was passed more than once; the last
// occurrence wins.
void warn_duplicates(const CLI::App* cmd) {
  for (const CLI::Option* opt : cmd->get_options()) {
    if (opt->count() > 1 && opt->get_expected_min() == 1)
      std::cerr << "warning: " << opt->get_name() << " given " << opt->count()
                << " times; using the last value\n";
  }
}

CLI::Option* add_last_wins(CLI::App* cmd, CLI::Option* opt) {
  (void)cmd;
  return opt->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
}

fs::path resolve_out(const std::string& out_flag, const std::string& default_name) {
  if (!out_flag.empty()) return fs::path(out_flag);
  if (const char* root = std::getenv(kOutRootEnv)) return fs::path(root) / default_name;
  GANET_THROW(ganet::ConfigError, "no --out given and ", kOutRootEnv, " is not set");
}

void ensure_fresh_dir(const fs::path& dir, bool overwrite, const fs::path& sentinel) {
  if (fs::exists(sentinel)) {
    GANET_CHECK(overwrite, ganet::ConfigError, "output '", sentinel.string(),
                "' already exists; pass --overwrite to replace it");
    fs::remove_all(dir);
  }
  fs::create_directories(dir);
}

std::string utc_timestamp() {
  const std::time_t now = std::time(nullptr);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&now));
  return buf;
}

void write_run_manifest(const fs::path& dir, const std::string& command, const json& config,
                        std::uint64_t seed) {
  json manifest;
  manifest["command"] = command;
  manifest["config"] = config;
  manifest["seed"] = seed;
  manifest["version"] = ganet::kVersion;
  manifest["revision"] = ganet::kGitRevision;
  manifest["created_utc"] = utc_timestamp();
  std::ofstream out(dir / "run_manifest.json");
  GANET_CHECK(out.good(), ganet::DataError, "cannot write run manifest in '", dir.string(), "'");
  out << manifest.dump(2) << "\n";
}

// ---------------------------------------------------------------------------
// synth

struct SynthArgs {
  CommonOpts common;
  std::int64_t num_tiles = 12;
  std::int64_t tile_size = 96;
  ganet::SyntheticOptions defaults;
  double texture_base = ganet::SyntheticOptions{}.texture_base;
  double texture_blend = ganet::SyntheticOptions{}.texture_blend;
  double ground_relief = ganet::SyntheticOptions{}.ground_relief_m;
  double min_elevation = ganet::SyntheticOptions{}.min_elevation_m;
  double max_elevation = ganet::SyntheticOptions{}.max_elevation_m;
  std::uint64_t seed = 0;
};

int run_synth(const SynthArgs& a) {
  const fs::path dir = resolve_out(a.common.out, "synthetic");
  ensure_fresh_dir(dir, a.common.overwrite, dir / "manifest.txt");
  ganet::SyntheticOptions opt;
  opt.num_tiles = a.num_tiles;
  opt.tile_size = a.tile_size;
  opt.texture_base = a.texture_base;
  opt.texture_blend = a.texture_blend;
  opt.ground_relief_m = a.ground_relief;
  opt.min_elevation_m = a.min_elevation;
  opt.max_elevation_m = a.max_elevation;
  const ganet::DatasetManifest manifest = ganet::write_synthetic_dataset(dir, opt, a.seed);
  json cfg;
  cfg["num_tiles"] = a.num_tiles;
  cfg["tile_size"] = a.tile_size;
  cfg["texture_base"] = a.texture_base;
  cfg["texture_blend"] = a.texture_blend;
  cfg["ground_relief_m"] = a.ground_relief;
  cfg["min_elevation_m"] = a.min_elevation;
  cfg["max_elevation_m"] = a.max_elevation;
  write_run_manifest(dir, "synth", cfg, a.seed);
  std::cout << "wrote " << manifest.train.size() << " train / " << manifest.val.size()
            << " val / " << manifest.test.size() << " test tiles under " << dir << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// train

struct TrainArgs {
  CommonOpts common;
  std::string data;
  std::uint64_t seed = 0;
  std::string fusion = "gac";
  std::string backbone = "tiny";
  std::string gac_norm = "softmax";
  int patch_size = 64;
  int decoder_channels = 32;
  int low_level_channels = 16;
  int gac_embed_channels = 0;
  std::vector<int> aspp_rates{6, 12, 18};
  ganet::TrainConfig tc;
};

json train_config_json(const TrainArgs& a) {
  json cfg;
  cfg["data"] = a.data;
  cfg["fusion"] = a.fusion;
  cfg["backbone"] = a.backbone;
  cfg["gac_normalization"] = a.gac_norm;
  cfg["patch_size"] = a.patch_size;
  cfg["decoder_channels"] = a.decoder_channels;
  cfg["low_level_channels"] = a.low_level_channels;
  cfg["gac_embed_channels"] = a.gac_embed_channels;
  cfg["aspp_rates"] = a.aspp_rates;
  cfg["epochs"] = a.tc.epochs;
  cfg["batch_size"] = a.tc.batch_size;
  cfg["lr_init"] = a.tc.lr_init;
  cfg["lr_min"] = a.tc.lr_min;
  cfg["momentum"] = a.tc.momentum;
  cfg["weight_decay"] = a.tc.weight_decay;
  cfg["lambda"] = a.tc.lambda;
  cfg["steps_per_epoch"] = a.tc.steps_per_epoch;
  cfg["replicas"] = a.tc.replicas;
  cfg["val_stride"] = a.tc.val_stride;
  return cfg;
}

int run_train(TrainArgs a, const fs::path& out_dir_override = {}) {
  const fs::path dir =
      out_dir_override.empty() ? resolve_out(a.common.out, "train") : out_dir_override;
  ensure_fresh_dir(dir, a.common.overwrite, dir / "run_manifest.json");

  const ganet::DatasetManifest manifest = ganet::DatasetManifest::load(a.data);
  ganet::TrainingData data = ganet::TrainingData::prepare(manifest);

  ganet::NetworkConfig net_cfg;
  net_cfg.backbone_depth = ganet::backbone_from_string(a.backbone);
  net_cfg.num_classes = manifest.num_classes;
  net_cfg.in_channels = data.train_tiles.front().optical_count();
  net_cfg.aspp_rates = a.aspp_rates;
  net_cfg.decoder_channels = a.decoder_channels;
  net_cfg.gac_embed_channels = a.gac_embed_channels;
  net_cfg.low_level_channels = a.low_level_channels;
  net_cfg.patch_size = a.patch_size;
  net_cfg.fusion = ganet::fusion_from_string(a.fusion);
  net_cfg.gac_normalization = ganet::gac_normalization_from_string(a.gac_norm);

  // Independent streams for initialization and batch sampling.
  ganet::Rng root(a.seed);
  ganet::Rng init_rng = root.split();
  a.tc.seed = root.next_u64();

  write_run_manifest(dir, "train", train_config_json(a), a.seed);
  auto model = ganet::build_network(net_cfg, init_rng);
  const ganet::TrainOutcome outcome = ganet::train(*model, data, a.tc, dir);
  std::cout << "trained " << outcome.total_steps << " steps; last checkpoint "
            << outcome.last_checkpoint << "\n";
  if (outcome.best_val_average_f1 >= 0.0)
    std::cout << "best validation average F1 " << outcome.best_val_average_f1 << " ("
              << outcome.best_checkpoint << ")\n";
  return 0;
}

// ---------------------------------------------------------------------------
// predict

struct PredictArgs {
  CommonOpts common;
  std::string checkpoint;
  std::string data;
  std::string split = "test";
  std::vector<std::string> tiles;  // subset of ids; empty = whole split
  std::vector<double> scales{1.0};
  std::int64_t stride = 32;
  int patch_size = 0;  // 0: use the checkpoint's patch size
  bool write_probs = false;
};

int run_predict(const PredictArgs& a) {
  GANET_CHECK(fs::exists(a.checkpoint), ganet::DataError, "checkpoint '", a.checkpoint,
              "' does not exist");
  const fs::path dir = resolve_out(a.common.out, "predictions");
  ensure_fresh_dir(dir, a.common.overwrite, dir / "run_manifest.json");

  ganet::LoadedCheckpoint ckpt = ganet::load_checkpoint(a.checkpoint);
  ckpt.model->set_training(false);
  ganet::ModelPredictor predictor(*ckpt.model, ckpt.input_mean, ckpt.input_stddev);

  const ganet::DatasetManifest manifest = ganet::DatasetManifest::load(a.data);
  const std::int64_t patch = a.patch_size > 0 ? a.patch_size : ckpt.model->config().patch_size;

  json cfg;
  cfg["checkpoint"] = a.checkpoint;
  cfg["data"] = a.data;
  cfg["split"] = a.split;
  cfg["scales"] = a.scales;
  cfg["stride"] = a.stride;
  cfg["patch_size"] = patch;
  write_run_manifest(dir, "predict", cfg, 0);

  int written = 0;
  for (const auto& entry : manifest.split(a.split)) {
    if (!a.tiles.empty() &&
        std::find(a.tiles.begin(), a.tiles.end(), entry.id) == a.tiles.end())
      continue;
    ganet::GeoRaster tile =
        ganet::load_tile(entry.optical, std::nullopt, std::nullopt, manifest.color_map);
    tile.id = entry.id;
    const ganet::ProbabilityField field =
        ganet::multiscale_predict(predictor, tile, a.scales, patch, a.stride);
    const ganet::IntTensor labels = field.argmax_labels();

    ganet::PnmImage label_img;
    label_img.height = field.h;
    label_img.width = field.w;
    label_img.channels = 3;
    label_img.maxval = 255;
    label_img.pixels.resize(static_cast<std::size_t>(field.h * field.w * 3));
    for (std::int64_t i = 0; i < field.h * field.w; ++i) {
      const auto rgb =
          manifest.color_map.color_of(labels.data[static_cast<std::size_t>(i)]);
      for (int k = 0; k < 3; ++k)
        label_img.pixels[static_cast<std::size_t>(i * 3 + k)] = rgb[k];
    }
    ganet::write_pnm(dir / (entry.id + "_label.ppm"), label_img);

    ganet::PnmImage height_img;
    height_img.height = field.h;
    height_img.width = field.w;
    height_img.channels = 1;
    height_img.maxval = 65535;
    height_img.pixels.resize(static_cast<std::size_t>(field.h * field.w));
    for (std::int64_t i = 0; i < field.h * field.w; ++i) {
      const double v = std::clamp(field.height[static_cast<std::size_t>(i)], 0.0, 1.0);
      height_img.pixels[static_cast<std::size_t>(i)] =
          static_cast<std::uint16_t>(std::llround(v * 65535.0));
    }
    ganet::write_pnm(dir / (entry.id + "_height.pgm"), height_img);

    if (a.write_probs) {
      for (int c = 0; c < field.num_classes; ++c) {
        ganet::PfmImage prob;
        prob.height = field.h;
        prob.width = field.w;
        prob.pixels.resize(static_cast<std::size_t>(field.h * field.w));
        for (std::int64_t i = 0; i < field.h * field.w; ++i)
          prob.pixels[static_cast<std::size_t>(i)] =
              static_cast<float>(field.probs[static_cast<std::size_t>(c * field.h * field.w + i)]);
        ganet::write_pfm(dir / (entry.id + "_prob_" + std::to_string(c) + ".pfm"), prob);
      }
    }
    ++written;
  }
  GANET_CHECK(written > 0, ganet::DataError, "no tiles matched split '", a.split, "'");
  std::cout << "wrote predictions for " << written << " tiles under " << dir << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// evaluate

struct EvaluateArgs {
  CommonOpts common;
  std::string pred;
  std::string data;
  std::string split = "test";
  int erosion = 3;
  std::vector<int> class_subset;  // empty: all classes except ignore
};

ganet::SegmentationReport evaluate_directory(const EvaluateArgs& a,
                                             const ganet::DatasetManifest& manifest) {
  ganet::ConfusionMatrix confusion(manifest.num_classes);
  int evaluated = 0;
  for (const auto& entry : manifest.split(a.split)) {
    const fs::path pred_path = fs::path(a.pred) / (entry.id + "_label.ppm");
    if (!fs::exists(pred_path)) continue;
    GANET_CHECK(entry.label.has_value(), ganet::DataError, "tile '", entry.id,
                "' has no ground-truth labels");
    ganet::GeoRaster truth_tile =
        ganet::load_tile(entry.optical, std::nullopt, entry.label, manifest.color_map);
    ganet::GeoRaster pred_tile =
        ganet::load_tile(pred_path, std::nullopt, pred_path, manifest.color_map);

    const std::int64_t h = truth_tile.height(), w = truth_tile.width();
    GANET_CHECK(pred_tile.height() == h && pred_tile.width() == w, ganet::DataError,
                "prediction '", pred_path.string(), "' does not match the tile extent");
    ganet::IntTensor truth({h, w}), predicted({h, w});
    const auto& tplane = truth_tile.plane(*truth_tile.find_channel(ganet::ChannelRole::kLabel));
    const auto& pplane = pred_tile.plane(*pred_tile.find_channel(ganet::ChannelRole::kLabel));
    for (std::int64_t i = 0; i < h * w; ++i) {
      truth.data[static_cast<std::size_t>(i)] =
          static_cast<std::int32_t>(std::llround(tplane[static_cast<std::size_t>(i)]));
      predicted.data[static_cast<std::size_t>(i)] =
          static_cast<std::int32_t>(std::llround(pplane[static_cast<std::size_t>(i)]));
    }
    std::vector<std::uint8_t> mask = ganet::erode_boundaries(truth, a.erosion);
    if (manifest.ignore_class >= 0)
      for (std::int64_t i = 0; i < h * w; ++i)
        if (truth.data[static_cast<std::size_t>(i)] == manifest.ignore_class)
          mask[static_cast<std::size_t>(i)] = 0;
    ganet::accumulate(confusion, predicted, truth, &mask);
    ++evaluated;
  }
  GANET_CHECK(evaluated > 0, ganet::DataError, "no predictions found in '", a.pred,
              "' for split '", a.split, "'");
  std::vector<int> subset = a.class_subset;
  if (subset.empty())
    for (int c = 0; c < manifest.num_classes; ++c)
      if (c != manifest.ignore_class) subset.push_back(c);
  ganet::SegmentationReport report = ganet::finalize(confusion, subset);
  report.eroded = a.erosion > 0;
  return report;
}

int run_evaluate(const EvaluateArgs& a) {
  const ganet::DatasetManifest manifest = ganet::DatasetManifest::load(a.data);
  const ganet::SegmentationReport report = evaluate_directory(a, manifest);
  std::cout << ganet::report_table(report);
  const fs::path report_path = a.common.out.empty() ? fs::path(a.pred) / "report.json"
                                                    : fs::path(a.common.out);
  if (fs::exists(report_path))
    GANET_CHECK(a.common.overwrite, ganet::ConfigError, "report '", report_path.string(),
                "' exists; pass --overwrite to replace it");
  ganet::write_report_json(report_path, report);
  std::cout << "report written to " << report_path << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// sweep (ablation grid)

struct SweepArgs {
  TrainArgs train;
  std::vector<std::string> fusions{"none", "sum", "gac"};
  std::vector<double> lambdas{0.0, 1.0};
  int seeds = 3;
  std::vector<double> scales{1.0};
  std::int64_t stride = 32;
  int erosion = 0;
};

int run_sweep(const SweepArgs& a) {
  const fs::path dir = resolve_out(a.train.common.out, "sweep");
  ensure_fresh_dir(dir, a.train.common.overwrite, dir / "sweep_summary.json");
  json summary = json::array();
  for (const std::string& fusion : a.fusions) {
    for (double lambda : a.lambdas) {
      for (int s = 0; s < a.seeds; ++s) {
        TrainArgs run = a.train;
        run.fusion = fusion;
        run.tc.lambda = lambda;
        run.seed = a.train.seed + static_cast<std::uint64_t>(s);
        char name[64];
        std::snprintf(name, sizeof name, "fusion_%s_lambda_%g_seed_%d", fusion.c_str(), lambda,
                      s);
        const fs::path run_dir = dir / name;
        run.common.overwrite = true;
        run_train(run, run_dir);

        PredictArgs pa;
        pa.checkpoint = (run_dir / "checkpoints" / "best.ckpt").string();
        if (!fs::exists(pa.checkpoint)) continue;
        pa.data = run.data;
        pa.split = "test";
        pa.scales = a.scales;
        pa.stride = a.stride;
        pa.common.out = (run_dir / "predictions").string();
        pa.common.overwrite = true;
        run_predict(pa);

        EvaluateArgs ea;
        ea.pred = pa.common.out;
        ea.data = run.data;
        ea.split = "test";
        ea.erosion = a.erosion;
        ea.common.overwrite = true;
        const ganet::DatasetManifest manifest = ganet::DatasetManifest::load(run.data);
        const ganet::SegmentationReport report = evaluate_directory(ea, manifest);

        json row;
        row["fusion"] = fusion;
        row["lambda"] = lambda;
        row["seed_index"] = s;
        row["overall_accuracy"] = report.overall_accuracy;
        row["average_f1"] = report.average_f1;
        summary.push_back(row);
        std::cout << name << ": OA " << report.overall_accuracy << ", avg F1 "
                  << report.average_f1 << "\n";
      }
    }
  }
  std::ofstream out(dir / "sweep_summary.json");
  out << summary.dump(2) << "\n";
  std::cout << "sweep summary written to " << (dir / "sweep_summary.json") << "\n";
  return 0;
}

void add_train_options(CLI::App* cmd, TrainArgs& a) {
  cmd->set_config("--config", "", "INI config file; command-line flags override file values");
  add_last_wins(cmd, cmd->add_option("--data", a.data, "dataset manifest path")->required());
  add_last_wins(cmd, cmd->add_option("--out", a.common.out, "output run directory"));
  cmd->add_flag("--overwrite", a.common.overwrite, "replace an existing run directory");
  add_last_wins(cmd, cmd->add_option("--seed", a.seed, "master seed"));
  add_last_wins(cmd, cmd->add_option("--fusion", a.fusion, "fusion mode: none|sum|gac")
                         ->check(CLI::IsMember({"none", "sum", "gac"})));
  add_last_wins(cmd, cmd->add_option("--lambda", a.tc.lambda, "height loss weight"));
  add_last_wins(cmd, cmd->add_option("--backbone", a.backbone, "backbone: tiny|50|101|152")
                         ->check(CLI::IsMember({"tiny", "50", "101", "152"})));
  add_last_wins(cmd, cmd->add_option("--gac-norm", a.gac_norm, "affinity normalization: softmax|scale")
                         ->check(CLI::IsMember({"softmax", "scale"})));
  add_last_wins(cmd, cmd->add_option("--patch-size", a.patch_size, "training patch size"));
  add_last_wins(cmd, cmd->add_option("--decoder-channels", a.decoder_channels, "embedding width"));
  add_last_wins(cmd,
                cmd->add_option("--low-level-channels", a.low_level_channels, "skip width"));
  add_last_wins(cmd, cmd->add_option("--gac-embed-channels", a.gac_embed_channels,
                                     "phi/psi width (0 = half of decoder)"));
  add_last_wins(cmd, cmd->add_option("--aspp-rates", a.aspp_rates, "ASPP dilation rates")
                         ->delimiter(','));
  add_last_wins(cmd, cmd->add_option("--epochs", a.tc.epochs, "training epochs"));
  add_last_wins(cmd, cmd->add_option("--batch-size", a.tc.batch_size, "patches per step"));
  add_last_wins(cmd, cmd->add_option("--lr-init", a.tc.lr_init, "initial learning rate"));
  add_last_wins(cmd, cmd->add_option("--lr-min", a.tc.lr_min, "final learning rate"));
  add_last_wins(cmd, cmd->add_option("--momentum", a.tc.momentum, "SGD momentum"));
  add_last_wins(cmd, cmd->add_option("--weight-decay", a.tc.weight_decay, "L2 weight decay"));
  add_last_wins(cmd, cmd->add_option("--steps-per-epoch", a.tc.steps_per_epoch,
                                     "steps per epoch (0 = derive from data volume)"));
  add_last_wins(cmd, cmd->add_option("--replicas", a.tc.replicas,
                                     "data-parallel replicas (simulated exactly)"));
  add_last_wins(cmd, cmd->add_option("--val-stride", a.tc.val_stride, "validation stride"));
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"GANet: geometry-aware aerial segmentation via joint height estimation"};
  app.require_subcommand(1);
  app.set_version_flag("--version",
                       std::string(ganet::kVersion) + " (" + ganet::kGitRevision + ")");

  SynthArgs synth;
  CLI::App* synth_cmd = app.add_subcommand("synth", "generate the synthetic benchmark dataset");
  add_last_wins(synth_cmd, synth_cmd->add_option("--out", synth.common.out, "dataset directory"));
  synth_cmd->add_flag("--overwrite", synth.common.overwrite, "replace an existing dataset");
  add_last_wins(synth_cmd, synth_cmd->add_option("--num-tiles", synth.num_tiles, "tile count")
                               ->check(CLI::PositiveNumber));
  add_last_wins(synth_cmd, synth_cmd->add_option("--tile-size", synth.tile_size,
                                                 "tile edge length (>= 64)"));
  add_last_wins(synth_cmd, synth_cmd->add_option("--texture-blend", synth.texture_blend,
                                                 "elevation-proportional correlated-noise gain")
                               ->check(CLI::Range(0.0, 1.0)));
  add_last_wins(synth_cmd, synth_cmd->add_option("--texture-base", synth.texture_base,
                                                 "correlated-noise floor at zero elevation")
                               ->check(CLI::Range(0.0, 1.0)));
  add_last_wins(synth_cmd,
                synth_cmd->add_option("--relief", synth.ground_relief, "ground relief in meters"));
  add_last_wins(synth_cmd, synth_cmd->add_option("--min-elev", synth.min_elevation,
                                                 "minimum rectangle elevation in meters"));
  add_last_wins(synth_cmd, synth_cmd->add_option("--max-elev", synth.max_elevation,
                                                 "maximum rectangle elevation in meters"));
  add_last_wins(synth_cmd, synth_cmd->add_option("--seed", synth.seed, "generator seed"));

  TrainArgs train_args;
  CLI::App* train_cmd = app.add_subcommand("train", "train a network");
  add_train_options(train_cmd, train_args);

  PredictArgs predict;
  CLI::App* predict_cmd = app.add_subcommand("predict", "sliding-window tile prediction");
  add_last_wins(predict_cmd,
                predict_cmd->add_option("--checkpoint", predict.checkpoint, "checkpoint path")
                    ->required());
  add_last_wins(predict_cmd,
                predict_cmd->add_option("--data", predict.data, "dataset manifest")->required());
  add_last_wins(predict_cmd,
                predict_cmd->add_option("--split", predict.split, "split: train|val|test"));
  add_last_wins(predict_cmd, predict_cmd->add_option("--tiles", predict.tiles,
                                                     "restrict to these tile ids")
                                 ->delimiter(','));
  add_last_wins(predict_cmd,
                predict_cmd->add_option("--scales", predict.scales, "multi-scale factors")
                    ->delimiter(','));
  add_last_wins(predict_cmd,
                predict_cmd->add_option("--stride", predict.stride, "sliding stride"));
  add_last_wins(predict_cmd, predict_cmd->add_option("--patch-size", predict.patch_size,
                                                     "window size (0 = checkpoint value)"));
  add_last_wins(predict_cmd,
                predict_cmd->add_option("--out", predict.common.out, "output directory"));
  predict_cmd->add_flag("--overwrite", predict.common.overwrite, "replace existing predictions");
  predict_cmd->add_flag("--probs", predict.write_probs, "also write per-class probability rasters");

  EvaluateArgs evaluate;
  CLI::App* eval_cmd = app.add_subcommand("evaluate", "score predictions against ground truth");
  add_last_wins(eval_cmd, eval_cmd->add_option("--pred", evaluate.pred, "prediction directory")
                              ->required());
  add_last_wins(eval_cmd,
                eval_cmd->add_option("--data", evaluate.data, "dataset manifest")->required());
  add_last_wins(eval_cmd, eval_cmd->add_option("--split", evaluate.split, "split to score"));
  add_last_wins(eval_cmd, eval_cmd->add_option("--erosion", evaluate.erosion,
                                               "boundary erosion radius in pixels")
                              ->check(CLI::NonNegativeNumber));
  add_last_wins(eval_cmd, eval_cmd->add_option("--classes", evaluate.class_subset,
                                               "class ids to report (default: all but ignore)")
                              ->delimiter(','));
  add_last_wins(eval_cmd,
                eval_cmd->add_option("--out", evaluate.common.out, "report path (JSON)"));
  eval_cmd->add_flag("--overwrite", evaluate.common.overwrite, "replace an existing report");

  SweepArgs sweep;
  CLI::App* sweep_cmd = app.add_subcommand("sweep", "fusion/lambda ablation grid");
  add_train_options(sweep_cmd, sweep.train);
  add_last_wins(sweep_cmd, sweep_cmd->add_option("--fusions", sweep.fusions, "fusion modes")
                               ->delimiter(','));
  add_last_wins(sweep_cmd, sweep_cmd->add_option("--lambdas", sweep.lambdas, "lambda values")
                               ->delimiter(','));
  add_last_wins(sweep_cmd,
                sweep_cmd->add_option("--seeds", sweep.seeds, "seeds per configuration")
                    ->check(CLI::PositiveNumber));
  add_last_wins(sweep_cmd, sweep_cmd->add_option("--scales", sweep.scales, "test-time scales")
                               ->delimiter(','));
  add_last_wins(sweep_cmd,
                sweep_cmd->add_option("--stride", sweep.stride, "test-time stride"));
  add_last_wins(sweep_cmd, sweep_cmd->add_option("--erosion", sweep.erosion,
                                                 "evaluation erosion radius"));

  try {
    app.parse(argc, argv);
    for (const CLI::App* cmd : app.get_subcommands()) warn_duplicates(cmd);
    if (*synth_cmd) return run_synth(synth);
    if (*train_cmd) return run_train(train_args);
    if (*predict_cmd) return run_predict(predict);
    if (*eval_cmd) return run_evaluate(evaluate);
    if (*sweep_cmd) return run_sweep(sweep);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  } catch (const ganet::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const ganet::NumericError& e) {
    std::cerr << "numerical abort: " << e.what() << "\n";
    return 4;
  } catch (const ganet::DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
