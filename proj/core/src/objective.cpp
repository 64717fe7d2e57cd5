#include "ganet/objective.hpp"

#include <cmath>
#include <memory>

namespace ganet {

Tensor weighted_cross_entropy(const Tensor& logits, const IntTensor& labels,
                              const std::vector<double>& class_weights,
                              std::int32_t ignore_value) {
  GANET_CHECK(logits.ndim() == 4, ShapeError, "weighted_cross_entropy: logits must be NKHW, got ",
              shape_str(logits.shape()));
  const std::int64_t n = logits.dim(0), k = logits.dim(1), h = logits.dim(2), w = logits.dim(3);
  GANET_CHECK(labels.shape == Shape({n, h, w}), ShapeError,
              "weighted_cross_entropy: labels shape ", shape_str(labels.shape),
              " does not match logits ", shape_str(logits.shape()));
  GANET_CHECK(static_cast<std::int64_t>(class_weights.size()) == k, ShapeError,
              "weighted_cross_entropy: ", class_weights.size(), " weights for ", k, " classes");

  const std::int64_t plane = h * w;
  const double* pz = logits.data();
  double acc = 0.0;
  std::int64_t valid = 0;
  for (std::int64_t b = 0; b < n; ++b) {
    for (std::int64_t i = 0; i < plane; ++i) {
      const std::int32_t label = labels.data[static_cast<std::size_t>(b * plane + i)];
      if (label == ignore_value) continue;
      GANET_CHECK(label >= 0 && label < k, DataError, "weighted_cross_entropy: label ", label,
                  " outside [0, ", k - 1, "]");
      // Stable log-sum-exp over the class axis (stride `plane`).
      const double* z = pz + b * k * plane + i;
      double mx = z[0];
      for (std::int64_t c = 1; c < k; ++c) mx = std::max(mx, z[c * plane]);
      double sum = 0.0;
      for (std::int64_t c = 0; c < k; ++c) sum += std::exp(z[c * plane] - mx);
      const double lse = mx + std::log(sum);
      acc += class_weights[static_cast<std::size_t>(label)] * (lse - z[label * plane]);
      ++valid;
    }
  }
  GANET_CHECK(valid > 0, DataError, "weighted_cross_entropy: every pixel is ignored");
  Tensor out = Tensor::scalar(acc / static_cast<double>(valid));

  auto weights = std::make_shared<std::vector<double>>(class_weights);
  auto labels_copy = std::make_shared<IntTensor>(labels);
  detail::attach_node(
      out, "weighted_cross_entropy", {logits},
      [logits, labels_copy, weights, ignore_value, n, k, plane, valid](const TensorImpl& o) mutable {
        if (!logits.requires_grad()) return;
        const double g = o.grad[0] / static_cast<double>(valid);
        const double* pz = logits.data();
        double* gz = logits.mutable_grad().data();
        for (std::int64_t b = 0; b < n; ++b) {
          for (std::int64_t i = 0; i < plane; ++i) {
            const std::int32_t label = labels_copy->data[static_cast<std::size_t>(b * plane + i)];
            if (label == ignore_value) continue;
            const double* z = pz + b * k * plane + i;
            double* dz = gz + b * k * plane + i;
            double mx = z[0];
            for (std::int64_t c = 1; c < k; ++c) mx = std::max(mx, z[c * plane]);
            double sum = 0.0;
            for (std::int64_t c = 0; c < k; ++c) sum += std::exp(z[c * plane] - mx);
            const double wl = (*weights)[static_cast<std::size_t>(label)] * g;
            for (std::int64_t c = 0; c < k; ++c) {
              const double p = std::exp(z[c * plane] - mx) / sum;
              dz[c * plane] += wl * (p - (c == label ? 1.0 : 0.0));
            }
          }
        }
      });
  return out;
}

Tensor height_l1(const Tensor& predicted, const Tensor& target,
                 const std::vector<std::uint8_t>* valid_mask) {
  GANET_CHECK(predicted.numel() == target.numel(), ShapeError, "height_l1: predicted ",
              shape_str(predicted.shape()), " vs target ", shape_str(target.shape()));
  const std::int64_t n = predicted.numel();
  if (valid_mask)
    GANET_CHECK(static_cast<std::int64_t>(valid_mask->size()) == n, ShapeError,
                "height_l1: mask size ", valid_mask->size(), " vs ", n, " pixels");
  const double* pp = predicted.data();
  const double* pt = target.data();
  double acc = 0.0;
  std::int64_t valid = 0;
  for (std::int64_t i = 0; i < n; ++i) {
    if (valid_mask && !(*valid_mask)[static_cast<std::size_t>(i)]) continue;
    acc += std::abs(pp[i] - pt[i]);
    ++valid;
  }
  GANET_CHECK(valid > 0, DataError, "height_l1: empty valid mask");
  Tensor out = Tensor::scalar(acc / static_cast<double>(valid));

  std::shared_ptr<std::vector<std::uint8_t>> mask;
  if (valid_mask) mask = std::make_shared<std::vector<std::uint8_t>>(*valid_mask);
  detail::attach_node(out, "height_l1", {predicted, target},
                      [predicted, target, mask, n, valid](const TensorImpl& o) mutable {
                        const double g = o.grad[0] / static_cast<double>(valid);
                        const double* pp = predicted.data();
                        const double* pt = target.data();
                        double* gp = predicted.requires_grad()
                                         ? predicted.mutable_grad().data()
                                         : nullptr;
                        double* gt = target.requires_grad() ? target.mutable_grad().data()
                                                            : nullptr;
                        for (std::int64_t i = 0; i < n; ++i) {
                          if (mask && !(*mask)[static_cast<std::size_t>(i)]) continue;
                          const double d = pp[i] - pt[i];
                          const double s = d > 0.0 ? 1.0 : (d < 0.0 ? -1.0 : 0.0);
                          if (gp) gp[i] += g * s;
                          if (gt) gt[i] -= g * s;
                        }
                      });
  return out;
}

LossBreakdown total_loss(const DualPrediction& pred, const IntTensor& labels,
                         const Tensor& height_target, const std::vector<double>& class_weights,
                         std::int32_t ignore_value, double lambda,
                         const std::vector<std::uint8_t>* height_mask) {
  GANET_CHECK(lambda >= 0.0, ConfigError, "total_loss: lambda must be >= 0, got ", lambda);
  LossBreakdown out;
  out.lambda = lambda;
  Tensor seg = weighted_cross_entropy(pred.seg_logits, labels, class_weights, ignore_value);
  out.seg_loss = seg.item();
  if (height_target.defined()) {
    Tensor hl = height_l1(pred.height, height_target, height_mask);
    out.height_loss = hl.item();
    out.total_tensor = ops::add(seg, ops::scale(hl, lambda));
  } else {
    GANET_CHECK(lambda == 0.0, ConfigError,
                "total_loss: height target required when lambda > 0");
    out.height_loss = 0.0;
    out.total_tensor = seg;
  }
  out.total = out.total_tensor.item();
  return out;
}

}  // namespace ganet
