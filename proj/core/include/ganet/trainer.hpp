#pragma once

#include <filesystem>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "ganet/checkpoint.hpp"
#include "ganet/dataset.hpp"
#include "ganet/network.hpp"

namespace ganet {

struct TrainConfig {
  int epochs = 100;
  int batch_size = 4;
  double lr_init = 0.01;
  double lr_min = 0.00002;
  double momentum = 0.9;
  double weight_decay = 0.0005;
  double lambda = 1.0;
  std::uint64_t seed = 0;
  int steps_per_epoch = 0;  // 0: ceil(total_train_pixels / (batch * patch^2))
  int replicas = 1;         // data parallelism, simulated exactly (see train())
  std::int64_t val_stride = 32;

  void validate() const;
};

// lr(step) = lr_min + (lr_init - lr_min) * (1 + cos(pi * step / total)) / 2.
double cosine_lr(std::int64_t step, std::int64_t total_steps, double lr_init, double lr_min);

// Per-channel replica statistics pooled into the moments of the concatenated
// batch (exact pooled-moments formula; variances are biased).
struct ReplicaMoments {
  double mean = 0.0;
  double var = 0.0;
  std::int64_t count = 0;
};
ReplicaMoments sync_batch_norm_reduce(const std::vector<ReplicaMoments>& replicas);

// Momentum SGD with L2 weight decay added to the gradient (not the loss).
// Parameters flagged no_decay (norm affines, biases) skip the decay term.
class SgdOptimizer {
 public:
  SgdOptimizer(std::vector<nn::ParamRef> params, double momentum, double weight_decay);

  void zero_grad();
  void step(double lr);

  std::map<std::string, std::vector<double>> momentum_buffers() const;
  void load_momentum_buffers(const std::map<std::string, std::vector<double>>& buffers);

 private:
  struct Entry {
    nn::ParamRef param;
    std::vector<double> velocity;
  };
  std::vector<Entry> entries_;
  double momentum_, weight_decay_;
};

// In-memory training data: tiles with normalized heights, class weights and
// optical normalization constants derived from the training split.
struct TrainingData {
  std::vector<GeoRaster> train_tiles;
  std::vector<GeoRaster> val_tiles;
  int num_classes = 0;
  std::int32_t ignore_class = -1;
  std::vector<double> class_weights;
  OpticalStats optical_stats;

  static TrainingData prepare(const DatasetManifest& manifest);
};

struct TrainOutcome {
  std::filesystem::path best_checkpoint;
  std::filesystem::path last_checkpoint;
  std::filesystem::path metrics_log;
  double best_val_average_f1 = -1.0;
  std::int64_t total_steps = 0;
};

// Runs the optimization loop: random patches with flip augmentation, the
// multi-task loss, momentum SGD under a cosine schedule, per-epoch validation
// and checkpointing. `replicas` multiplies the effective batch; the shards
// are trained as one concatenated batch, which reproduces synchronized
// batch-norm moments and averaged gradients exactly.
TrainOutcome train(GANetModel& model, const TrainingData& data, const TrainConfig& config,
                   const std::filesystem::path& out_dir);

}  // namespace ganet
