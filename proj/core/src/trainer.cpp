#include "ganet/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>

#include <json.hpp>

#include "ganet/inference.hpp"
#include "ganet/metrics.hpp"
#include "ganet/objective.hpp"

namespace ganet {

namespace fs = std::filesystem;

void TrainConfig::validate() const {
  GANET_CHECK(epochs >= 1, ConfigError, "epochs must be >= 1");
  GANET_CHECK(batch_size >= 1, ConfigError, "batch_size must be >= 1");
  GANET_CHECK(lr_init > 0.0 && lr_min > 0.0, ConfigError, "learning rates must be positive");
  GANET_CHECK(lr_min <= lr_init, ConfigError, "lr_min must not exceed lr_init");
  GANET_CHECK(momentum >= 0.0 && momentum < 1.0, ConfigError, "momentum must be in [0, 1)");
  GANET_CHECK(weight_decay >= 0.0, ConfigError, "weight_decay must be >= 0");
  GANET_CHECK(lambda >= 0.0, ConfigError, "lambda must be >= 0");
  GANET_CHECK(steps_per_epoch >= 0, ConfigError, "steps_per_epoch must be >= 0");
  GANET_CHECK(replicas >= 1, ConfigError, "replicas must be >= 1");
  GANET_CHECK(val_stride >= 1, ConfigError, "val_stride must be >= 1");
}

double cosine_lr(std::int64_t step, std::int64_t total_steps, double lr_init, double lr_min) {
  GANET_CHECK(total_steps >= 1, ConfigError, "cosine_lr: total_steps must be >= 1");
  GANET_CHECK(step >= 0 && step <= total_steps, ConfigError, "cosine_lr: step ", step,
              " outside [0, ", total_steps, "]");
  const double phase = M_PI * static_cast<double>(step) / static_cast<double>(total_steps);
  return lr_min + 0.5 * (lr_init - lr_min) * (1.0 + std::cos(phase));
}

ReplicaMoments sync_batch_norm_reduce(const std::vector<ReplicaMoments>& replicas) {
  GANET_CHECK(!replicas.empty(), ConfigError, "sync_batch_norm_reduce: no replicas");
  std::int64_t total = 0;
  double mean_acc = 0.0;
  for (const auto& r : replicas) {
    GANET_CHECK(r.count > 0, ConfigError, "sync_batch_norm_reduce: replica count must be > 0");
    total += r.count;
    mean_acc += static_cast<double>(r.count) * r.mean;
  }
  ReplicaMoments pooled;
  pooled.count = total;
  pooled.mean = mean_acc / static_cast<double>(total);
  double second_moment = 0.0;
  for (const auto& r : replicas)
    second_moment += static_cast<double>(r.count) * (r.var + r.mean * r.mean);
  pooled.var = second_moment / static_cast<double>(total) - pooled.mean * pooled.mean;
  return pooled;
}

SgdOptimizer::SgdOptimizer(std::vector<nn::ParamRef> params, double momentum,
                           double weight_decay)
    : momentum_(momentum), weight_decay_(weight_decay) {
  for (auto& p : params) {
    Entry e;
    e.param = p;
    e.velocity.assign(static_cast<std::size_t>(p.tensor.numel()), 0.0);
    entries_.push_back(std::move(e));
  }
}

void SgdOptimizer::zero_grad() {
  for (auto& e : entries_) {
    e.param.tensor.ensure_grad();
    e.param.tensor.zero_grad();
  }
}

void SgdOptimizer::step(double lr) {
  for (auto& e : entries_) {
    Tensor t = e.param.tensor;
    GANET_CHECK(t.grad_defined(), Error, "SgdOptimizer::step: parameter '", e.param.name,
                "' has no gradient");
    const std::vector<double>& g = t.grad();
    double* value = t.data();
    const double wd = e.param.no_decay ? 0.0 : weight_decay_;
    for (std::size_t i = 0; i < e.velocity.size(); ++i) {
      const double grad = g[i] + wd * value[i];
      e.velocity[i] = momentum_ * e.velocity[i] + grad;
      value[i] -= lr * e.velocity[i];
    }
  }
}

std::map<std::string, std::vector<double>> SgdOptimizer::momentum_buffers() const {
  std::map<std::string, std::vector<double>> out;
  for (const auto& e : entries_) out.emplace(e.param.name, e.velocity);
  return out;
}

void SgdOptimizer::load_momentum_buffers(
    const std::map<std::string, std::vector<double>>& buffers) {
  for (auto& e : entries_) {
    auto it = buffers.find(e.param.name);
    if (it == buffers.end()) continue;
    GANET_CHECK(it->second.size() == e.velocity.size(), DataError,
                "momentum buffer '", e.param.name, "' has wrong size");
    e.velocity = it->second;
  }
}

TrainingData TrainingData::prepare(const DatasetManifest& manifest) {
  TrainingData data;
  data.train_tiles = load_split(manifest, "train");
  data.val_tiles = load_split(manifest, "val");
  GANET_CHECK(!data.train_tiles.empty(), DataError, "training split is empty");
  data.num_classes = manifest.num_classes;
  data.ignore_class = manifest.ignore_class;
  data.class_weights =
      compute_class_weights(data.train_tiles, manifest.num_classes, manifest.ignore_class)
          .weights;
  data.optical_stats = compute_optical_stats(data.train_tiles);
  return data;
}

namespace {

std::vector<int> evaluated_classes(int num_classes, std::int32_t ignore_class) {
  std::vector<int> subset;
  for (int c = 0; c < num_classes; ++c)
    if (c != ignore_class) subset.push_back(c);
  return subset;
}

double validation_average_f1(GANetModel& model, const TrainingData& data,
                             const TrainConfig& config) {
  if (data.val_tiles.empty()) return -1.0;
  model.set_training(false);
  ModelPredictor predictor(model, data.optical_stats.mean, data.optical_stats.stddev);
  ConfusionMatrix confusion(data.num_classes);
  const std::int64_t patch = model.config().patch_size;
  for (const auto& tile : data.val_tiles) {
    const auto lc = tile.find_channel(ChannelRole::kLabel);
    GANET_CHECK(lc.has_value(), DataError, "validation tile '", tile.id, "' has no labels");
    const StitchPlan plan =
        plan_windows(tile.height(), tile.width(), patch, config.val_stride);
    const ProbabilityField field = predict_tile(predictor, tile, plan);
    const IntTensor predicted = field.argmax_labels();
    IntTensor truth({tile.height(), tile.width()});
    const auto& plane = tile.plane(*lc);
    std::vector<std::uint8_t> mask(plane.size(), 1);
    for (std::size_t i = 0; i < plane.size(); ++i) {
      truth.data[i] = static_cast<std::int32_t>(std::llround(plane[i]));
      if (truth.data[i] == data.ignore_class) mask[i] = 0;
    }
    accumulate(confusion, predicted, truth, &mask);
  }
  model.set_training(true);
  return finalize(confusion, evaluated_classes(data.num_classes, data.ignore_class)).average_f1;
}

}  // namespace

TrainOutcome train(GANetModel& model, const TrainingData& data, const TrainConfig& config,
                   const fs::path& out_dir) {
  config.validate();
  GANET_CHECK(!data.train_tiles.empty(), DataError, "train: dataset is empty");
  GANET_CHECK(static_cast<int>(data.class_weights.size()) == data.num_classes, ConfigError,
              "train: class weight count mismatch");

  const std::int64_t patch = model.config().patch_size;
  std::int64_t steps_per_epoch = config.steps_per_epoch;
  if (steps_per_epoch == 0) {
    // One epoch visits roughly every pixel once.
    std::int64_t total_pixels = 0;
    for (const auto& t : data.train_tiles) total_pixels += t.pixels();
    const std::int64_t denom =
        static_cast<std::int64_t>(config.batch_size) * config.replicas * patch * patch;
    steps_per_epoch = std::max<std::int64_t>(1, (total_pixels + denom - 1) / denom);
  }
  const std::int64_t total_steps = steps_per_epoch * config.epochs;

  fs::create_directories(out_dir / "checkpoints");
  const fs::path log_path = out_dir / "metrics.jsonl";
  std::ofstream log(log_path);
  GANET_CHECK(log.good(), DataError, "cannot write metrics log '", log_path.string(), "'");

  model.set_training(true);
  SgdOptimizer optimizer(model.named_parameters(), config.momentum, config.weight_decay);
  Rng rng(config.seed);

  TrainOutcome outcome;
  outcome.metrics_log = log_path;
  outcome.total_steps = total_steps;

  const int batch_total = config.batch_size * config.replicas;
  const int in_channels = model.config().in_channels;
  const bool use_height = config.lambda > 0.0;
  TrainerState state;

  const auto t0 = std::chrono::steady_clock::now();
  std::int64_t global_step = 0;
  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    for (std::int64_t s = 0; s < steps_per_epoch; ++s) {
      // Assemble the (replica-concatenated) batch.
      Tensor input({batch_total, in_channels, patch, patch});
      IntTensor labels({batch_total, patch, patch});
      Tensor height_target = use_height ? Tensor({batch_total, 1, patch, patch}) : Tensor();
      std::vector<std::string> batch_tiles;
      for (int b = 0; b < batch_total; ++b) {
        const std::size_t tile_idx = static_cast<std::size_t>(
            rng.uniform_int(0, static_cast<std::int64_t>(data.train_tiles.size()) - 1));
        const GeoRaster& tile = data.train_tiles[tile_idx];
        PatchSample sample = augment(sample_patch(tile, patch, rng), rng);
        batch_tiles.push_back(sample.source_tile_id);
        GANET_CHECK(sample.labels.numel() > 0, DataError, "training tile '", tile.id,
                    "' has no labels");
        GANET_CHECK(sample.image.dim(0) == in_channels, DataError, "tile '", tile.id, "' has ",
                    sample.image.dim(0), " optical channels, network expects ", in_channels);
        // Standardize the optical channels with the training-split statistics.
        for (int c = 0; c < in_channels; ++c) {
          const double mu = data.optical_stats.mean[static_cast<std::size_t>(c)];
          const double inv = 1.0 / data.optical_stats.stddev[static_cast<std::size_t>(c)];
          const double* src = sample.image.data() + c * patch * patch;
          double* dst = input.data() + ((b * in_channels + c) * patch) * patch;
          for (std::int64_t i = 0; i < patch * patch; ++i) dst[i] = (src[i] - mu) * inv;
        }
        std::copy(sample.labels.data.begin(), sample.labels.data.end(),
                  labels.data.begin() + b * patch * patch);
        if (use_height) {
          GANET_CHECK(sample.height.defined(), DataError, "tile '", tile.id,
                      "' has no height channel but lambda > 0");
          std::copy_n(sample.height.data(), patch * patch,
                      height_target.data() + b * patch * patch);
        }
      }

      const double lr = cosine_lr(global_step, total_steps, config.lr_init, config.lr_min);
      optimizer.zero_grad();
      DualPrediction pred = model.forward(input);
      LossBreakdown loss = total_loss(pred, labels, height_target, data.class_weights,
                                      data.ignore_class, config.lambda);
      if (!std::isfinite(loss.total)) {
        std::string ids;
        for (const auto& id : batch_tiles) ids += (ids.empty() ? "" : ", ") + id;
        GANET_THROW(NumericError, "non-finite loss at step ", global_step,
                    " (seg=", loss.seg_loss, ", height=", loss.height_loss,
                    "); batch tiles [", ids, "]");
      }
      loss.total_tensor.backward();
      optimizer.step(lr);
      ++global_step;

      const double wall =
          std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      nlohmann::json rec;
      rec["step"] = global_step;
      rec["epoch"] = epoch;
      rec["lr"] = lr;
      rec["seg_loss"] = loss.seg_loss;
      rec["height_loss"] = loss.height_loss;
      rec["total"] = loss.total;
      rec["wall_time"] = wall;
      log << rec.dump() << "\n";
    }
    log.flush();

    // Epoch-end checkpoint plus best-on-validation.
    state.global_step = global_step;
    state.epoch = epoch;
    state.momentum = optimizer.momentum_buffers();
    char name[32];
    std::snprintf(name, sizeof name, "epoch_%03d.ckpt", epoch);
    const fs::path epoch_path = out_dir / "checkpoints" / name;
    save_checkpoint(epoch_path, model, data.optical_stats.mean, data.optical_stats.stddev,
                    &state);
    outcome.last_checkpoint = epoch_path;

    const double val_f1 = validation_average_f1(model, data, config);
    if (val_f1 >= 0.0) {
      nlohmann::json rec;
      rec["epoch"] = epoch;
      rec["step"] = global_step;
      rec["val_average_f1"] = val_f1;
      log << rec.dump() << "\n";
      log.flush();
    }
    if (val_f1 >= 0.0 && val_f1 > outcome.best_val_average_f1) {
      outcome.best_val_average_f1 = val_f1;
      state.best_val_f1 = val_f1;
      outcome.best_checkpoint = out_dir / "checkpoints" / "best.ckpt";
      save_checkpoint(outcome.best_checkpoint, model, data.optical_stats.mean,
                      data.optical_stats.stddev, &state);
    }
  }
  if (outcome.best_checkpoint.empty()) outcome.best_checkpoint = outcome.last_checkpoint;
  return outcome;
}

}  // namespace ganet
