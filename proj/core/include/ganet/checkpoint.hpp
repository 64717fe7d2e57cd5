#pragma once

#include <filesystem>
#include <map>
#include <memory>
#include <vector>

#include "ganet/network.hpp"

namespace ganet {

// Optimizer and progress state stored alongside the parameters.
struct TrainerState {
  std::int64_t global_step = 0;
  int epoch = 0;
  double best_val_f1 = -1.0;
  std::map<std::string, std::vector<double>> momentum;  // by parameter name
};

// Versioned container: JSON header (config echo, normalization constants,
// tensor index) followed by raw little-endian float64 blobs. Round-trips are
// bitwise exact.
void save_checkpoint(const std::filesystem::path& path, const GANetModel& model,
                     const std::vector<double>& input_mean,
                     const std::vector<double>& input_stddev,
                     const TrainerState* trainer_state = nullptr);

struct LoadedCheckpoint {
  std::unique_ptr<GANetModel> model;
  std::vector<double> input_mean, input_stddev;
  TrainerState trainer_state;
  bool has_trainer_state = false;
};

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace ganet
