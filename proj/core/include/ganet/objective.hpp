#pragma once

#include <cstdint>
#include <vector>

#include "ganet/network.hpp"
#include "ganet/tensor.hpp"

namespace ganet {

inline constexpr std::int32_t kNoIgnore = -1;

// Mean over non-ignored pixels of -w[label] * log softmax(logits)[label].
// Throws DataError when every pixel is ignored.
Tensor weighted_cross_entropy(const Tensor& logits, const IntTensor& labels,
                              const std::vector<double>& class_weights,
                              std::int32_t ignore_value = kNoIgnore);

// Mean absolute error over valid pixels. `valid_mask`, when non-null, must
// have one entry per pixel; throws DataError when no pixel is valid.
Tensor height_l1(const Tensor& predicted, const Tensor& target,
                 const std::vector<std::uint8_t>* valid_mask = nullptr);

// Per-batch multi-task loss: total = seg + lambda * height.
struct LossBreakdown {
  double seg_loss = 0.0;
  double height_loss = 0.0;
  double lambda = 0.0;
  double total = 0.0;
  Tensor total_tensor;  // differentiable
};

// `height_target` may be undefined only when lambda == 0, in which case the
// height term is zero and the result is purely the segmentation loss.
LossBreakdown total_loss(const DualPrediction& pred, const IntTensor& labels,
                         const Tensor& height_target, const std::vector<double>& class_weights,
                         std::int32_t ignore_value, double lambda,
                         const std::vector<std::uint8_t>* height_mask = nullptr);

}  // namespace ganet
