#pragma once

#include <vector>

#include "ganet/network.hpp"
#include "ganet/raster.hpp"

namespace ganet {

struct WindowSpec {
  std::int64_t row = 0, col = 0, size = 0;
};

// Sliding-window covering of a tile: regular stride positions plus an
// edge-aligned final window per axis when needed. Every pixel is covered by
// at least one window and no window leaves the tile.
struct StitchPlan {
  std::vector<WindowSpec> windows;
  std::int64_t tile_h = 0, tile_w = 0;
  std::int64_t patch = 0, stride = 0;
};

StitchPlan plan_windows(std::int64_t tile_h, std::int64_t tile_w, std::int64_t patch,
                        std::int64_t stride);

// Accumulated per-pixel class probabilities and heights with coverage counts;
// finalization divides by coverage.
struct ProbabilityField {
  std::int64_t h = 0, w = 0;
  int num_classes = 0;
  std::vector<double> probs;     // K planes of h*w
  std::vector<double> height;    // h*w
  std::vector<double> coverage;  // h*w
  bool finalized = false;

  IntTensor argmax_labels() const;
  double prob_at(int cls, std::int64_t row, std::int64_t col) const;
};

// Anything that maps an optical batch to dual predictions. The model wrapper
// applies input normalization and requires eval mode; test stubs are free.
class TilePredictor {
 public:
  virtual ~TilePredictor() = default;
  virtual DualPrediction predict(const Tensor& batch) = 0;
  virtual int num_classes() const = 0;
  virtual int in_channels() const = 0;
};

class ModelPredictor : public TilePredictor {
 public:
  ModelPredictor(GANetModel& model, std::vector<double> input_mean,
                 std::vector<double> input_stddev);
  DualPrediction predict(const Tensor& batch) override;
  int num_classes() const override { return model_.config().num_classes; }
  int in_channels() const override { return model_.config().in_channels; }

 private:
  GANetModel& model_;
  std::vector<double> mean_, stddev_;
};

// Runs every window of the plan (batched), accumulates softmax probabilities
// and heights, and finalizes by coverage averaging.
ProbabilityField predict_tile(TilePredictor& predictor, const GeoRaster& tile,
                              const StitchPlan& plan, std::int64_t window_batch = 8);

// Resamples the tile to each scale, predicts, maps each field back to native
// resolution, and averages the fields with equal weight.
ProbabilityField multiscale_predict(TilePredictor& predictor, const GeoRaster& tile,
                                    const std::vector<double>& scales, std::int64_t patch,
                                    std::int64_t stride);

}  // namespace ganet
