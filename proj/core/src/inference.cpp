#include "ganet/inference.hpp"

#include <algorithm>
#include <cmath>

#include "ganet/ops.hpp"

namespace ganet {

StitchPlan plan_windows(std::int64_t tile_h, std::int64_t tile_w, std::int64_t patch,
                        std::int64_t stride) {
  GANET_CHECK(patch >= 1 && stride >= 1, ConfigError, "plan_windows: patch and stride must be positive");
  GANET_CHECK(stride <= patch, ConfigError, "plan_windows: stride ", stride, " exceeds patch ",
              patch, "; coverage would have gaps");
  GANET_CHECK(patch <= tile_h && patch <= tile_w, ShapeError, "plan_windows: patch ", patch,
              " exceeds tile ", tile_h, "x", tile_w);
  auto axis_starts = [&](std::int64_t extent) {
    std::vector<std::int64_t> starts;
    for (std::int64_t pos = 0; pos + patch <= extent; pos += stride) starts.push_back(pos);
    if (starts.back() + patch < extent) starts.push_back(extent - patch);
    return starts;
  };
  StitchPlan plan;
  plan.tile_h = tile_h;
  plan.tile_w = tile_w;
  plan.patch = patch;
  plan.stride = stride;
  for (std::int64_t r : axis_starts(tile_h))
    for (std::int64_t c : axis_starts(tile_w)) plan.windows.push_back({r, c, patch});
  return plan;
}

IntTensor ProbabilityField::argmax_labels() const {
  GANET_CHECK(finalized, Error, "argmax_labels: field not finalized");
  IntTensor labels({h, w});
  for (std::int64_t i = 0; i < h * w; ++i) {
    int best = 0;
    double best_p = probs[static_cast<std::size_t>(i)];
    for (int c = 1; c < num_classes; ++c) {
      const double p = probs[static_cast<std::size_t>(c * h * w + i)];
      if (p > best_p) {
        best_p = p;
        best = c;
      }
    }
    labels.data[static_cast<std::size_t>(i)] = best;
  }
  return labels;
}

double ProbabilityField::prob_at(int cls, std::int64_t row, std::int64_t col) const {
  return probs[static_cast<std::size_t>(cls * h * w + row * w + col)];
}

ModelPredictor::ModelPredictor(GANetModel& model, std::vector<double> input_mean,
                               std::vector<double> input_stddev)
    : model_(model), mean_(std::move(input_mean)), stddev_(std::move(input_stddev)) {
  GANET_CHECK(static_cast<int>(mean_.size()) == model_.config().in_channels &&
                  static_cast<int>(stddev_.size()) == model_.config().in_channels,
              ConfigError, "ModelPredictor: normalization constants do not match in_channels");
}

DualPrediction ModelPredictor::predict(const Tensor& batch) {
  GANET_CHECK(!model_.training(), ConfigError,
              "tile prediction requires the network in eval mode");
  autograd::NoGradGuard ng;
  Tensor normalized(batch.shape());
  const std::int64_t n = batch.dim(0), c = batch.dim(1), hw = batch.dim(2) * batch.dim(3);
  for (std::int64_t b = 0; b < n; ++b)
    for (std::int64_t ch = 0; ch < c; ++ch) {
      const double mu = mean_[static_cast<std::size_t>(ch)];
      const double inv = 1.0 / stddev_[static_cast<std::size_t>(ch)];
      const double* src = batch.data() + (b * c + ch) * hw;
      double* dst = normalized.data() + (b * c + ch) * hw;
      for (std::int64_t i = 0; i < hw; ++i) dst[i] = (src[i] - mu) * inv;
    }
  return model_.forward(normalized);
}

namespace {

// Stable per-pixel softmax over the class planes of one window prediction.
void accumulate_window(const DualPrediction& pred, std::int64_t sample,
                       const WindowSpec& window, ProbabilityField& field) {
  const std::int64_t k = pred.seg_logits.dim(1);
  const std::int64_t size = window.size;
  const std::int64_t plane = size * size;
  const double* logits = pred.seg_logits.data() + sample * k * plane;
  const double* height = pred.height.data() + sample * plane;
  std::vector<double> p(static_cast<std::size_t>(k));
  for (std::int64_t y = 0; y < size; ++y) {
    for (std::int64_t x = 0; x < size; ++x) {
      const std::int64_t local = y * size + x;
      double mx = logits[local];
      for (std::int64_t c = 1; c < k; ++c) mx = std::max(mx, logits[c * plane + local]);
      double sum = 0.0;
      for (std::int64_t c = 0; c < k; ++c) {
        p[static_cast<std::size_t>(c)] = std::exp(logits[c * plane + local] - mx);
        sum += p[static_cast<std::size_t>(c)];
      }
      const std::int64_t global = (window.row + y) * field.w + (window.col + x);
      for (std::int64_t c = 0; c < k; ++c)
        field.probs[static_cast<std::size_t>(c * field.h * field.w + global)] +=
            p[static_cast<std::size_t>(c)] / sum;
      field.height[static_cast<std::size_t>(global)] += height[local];
      field.coverage[static_cast<std::size_t>(global)] += 1.0;
    }
  }
}

void finalize_field(ProbabilityField& field) {
  const std::int64_t hw = field.h * field.w;
  for (std::int64_t i = 0; i < hw; ++i) {
    const double cov = field.coverage[static_cast<std::size_t>(i)];
    GANET_CHECK(cov >= 1.0, Error, "stitching left pixel ", i, " uncovered");
    const double inv = 1.0 / cov;
    for (int c = 0; c < field.num_classes; ++c)
      field.probs[static_cast<std::size_t>(c * hw + i)] *= inv;
    field.height[static_cast<std::size_t>(i)] *= inv;
  }
  field.finalized = true;
}

Tensor optical_tensor(const GeoRaster& tile) {
  const int channels = tile.optical_count();
  GANET_CHECK(channels >= 1, DataError, "tile '", tile.id, "' has no optical channels");
  Tensor out({channels, tile.height(), tile.width()});
  int oc = 0;
  for (int c = 0; c < tile.channel_count(); ++c) {
    if (tile.role(c) != ChannelRole::kOpticalBand) continue;
    std::copy(tile.plane(c).begin(), tile.plane(c).end(), out.data() + oc * tile.pixels());
    ++oc;
  }
  return out;
}

ProbabilityField predict_optical(TilePredictor& predictor, const Tensor& optical,
                                 const StitchPlan& plan, std::int64_t window_batch) {
  const std::int64_t c = optical.dim(0), h = optical.dim(1), w = optical.dim(2);
  GANET_CHECK(plan.tile_h == h && plan.tile_w == w, ShapeError, "stitch plan is for ",
              plan.tile_h, "x", plan.tile_w, " but tile is ", h, "x", w);
  GANET_CHECK(static_cast<int>(c) == predictor.in_channels(), ShapeError,
              "predictor expects ", predictor.in_channels(), " channels, tile has ", c);
  ProbabilityField field;
  field.h = h;
  field.w = w;
  field.num_classes = predictor.num_classes();
  field.probs.assign(static_cast<std::size_t>(field.num_classes * h * w), 0.0);
  field.height.assign(static_cast<std::size_t>(h * w), 0.0);
  field.coverage.assign(static_cast<std::size_t>(h * w), 0.0);

  const std::int64_t patch = plan.patch;
  for (std::size_t begin = 0; begin < plan.windows.size();
       begin += static_cast<std::size_t>(window_batch)) {
    const std::size_t end =
        std::min(plan.windows.size(), begin + static_cast<std::size_t>(window_batch));
    const std::int64_t n = static_cast<std::int64_t>(end - begin);
    Tensor batch({n, c, patch, patch});
    for (std::int64_t b = 0; b < n; ++b) {
      const WindowSpec& win = plan.windows[begin + static_cast<std::size_t>(b)];
      for (std::int64_t ch = 0; ch < c; ++ch)
        for (std::int64_t y = 0; y < patch; ++y)
          std::copy_n(optical.data() + ch * h * w + (win.row + y) * w + win.col, patch,
                      batch.data() + ((b * c + ch) * patch + y) * patch);
    }
    DualPrediction pred = predictor.predict(batch);
    GANET_CHECK(pred.seg_logits.dim(1) == field.num_classes, ShapeError,
                "predictor produced ", pred.seg_logits.dim(1), " classes, expected ",
                field.num_classes);
    for (std::int64_t b = 0; b < n; ++b)
      accumulate_window(pred, b, plan.windows[begin + static_cast<std::size_t>(b)], field);
  }
  finalize_field(field);
  return field;
}

// Edge-replicating pad on the right/bottom up to the requested extent.
Tensor pad_to(const Tensor& optical, std::int64_t out_h, std::int64_t out_w) {
  const std::int64_t c = optical.dim(0), h = optical.dim(1), w = optical.dim(2);
  if (out_h == h && out_w == w) return optical;
  Tensor out({c, out_h, out_w});
  for (std::int64_t ch = 0; ch < c; ++ch)
    for (std::int64_t r = 0; r < out_h; ++r) {
      const std::int64_t sr = std::min(r, h - 1);
      for (std::int64_t col = 0; col < out_w; ++col) {
        const std::int64_t sc = std::min(col, w - 1);
        out.data()[(ch * out_h + r) * out_w + col] = optical.data()[(ch * h + sr) * w + sc];
      }
    }
  return out;
}

ProbabilityField single_scale_field(TilePredictor& predictor, const Tensor& optical,
                                    double scale, std::int64_t patch, std::int64_t stride) {
  const std::int64_t h = optical.dim(1), w = optical.dim(2);
  const std::int64_t sh = std::max<std::int64_t>(1, std::llround(h * scale));
  const std::int64_t sw = std::max<std::int64_t>(1, std::llround(w * scale));
  autograd::NoGradGuard ng;
  Tensor scaled = optical;
  if (sh != h || sw != w) {
    Tensor batched = ops::reshape(optical, {1, optical.dim(0), h, w});
    scaled = ops::reshape(ops::bilinear_resize(batched, sh, sw), {optical.dim(0), sh, sw});
  }
  // Pad when the scaled tile is smaller than one patch.
  const std::int64_t ph = std::max(sh, patch), pw = std::max(sw, patch);
  Tensor padded = pad_to(scaled, ph, pw);
  ProbabilityField field =
      predict_optical(predictor, padded, plan_windows(ph, pw, patch, stride), 8);

  // Crop padding back, then resample to native resolution.
  ProbabilityField out;
  out.h = h;
  out.w = w;
  out.num_classes = field.num_classes;
  const std::int64_t k = field.num_classes;
  Tensor planes({1, k + 1, ph, pw});
  for (int c = 0; c < k; ++c)
    std::copy_n(field.probs.begin() + static_cast<std::size_t>(c) * ph * pw, ph * pw,
                planes.data() + c * ph * pw);
  std::copy(field.height.begin(), field.height.end(), planes.data() + k * ph * pw);
  Tensor cropped({1, k + 1, sh, sw});
  for (std::int64_t c = 0; c <= k; ++c)
    for (std::int64_t r = 0; r < sh; ++r)
      std::copy_n(planes.data() + (c * ph + r) * pw, sw, cropped.data() + (c * sh + r) * sw);
  Tensor native = ops::bilinear_resize(cropped, h, w);
  out.probs.assign(static_cast<std::size_t>(k * h * w), 0.0);
  out.height.assign(static_cast<std::size_t>(h * w), 0.0);
  out.coverage.assign(static_cast<std::size_t>(h * w), 1.0);
  std::copy_n(native.data(), k * h * w, out.probs.begin());
  std::copy_n(native.data() + k * h * w, h * w, out.height.begin());
  out.finalized = true;
  return out;
}

}  // namespace

ProbabilityField predict_tile(TilePredictor& predictor, const GeoRaster& tile,
                              const StitchPlan& plan, std::int64_t window_batch) {
  return predict_optical(predictor, optical_tensor(tile), plan, window_batch);
}

ProbabilityField multiscale_predict(TilePredictor& predictor, const GeoRaster& tile,
                                    const std::vector<double>& scales, std::int64_t patch,
                                    std::int64_t stride) {
  GANET_CHECK(!scales.empty(), ConfigError, "multiscale_predict: no scales given");
  for (double s : scales)
    GANET_CHECK(s > 0.0, ConfigError, "multiscale_predict: scale must be positive, got ", s);
  const Tensor optical = optical_tensor(tile);
  ProbabilityField mean;
  for (std::size_t i = 0; i < scales.size(); ++i) {
    ProbabilityField field = single_scale_field(predictor, optical, scales[i], patch, stride);
    if (i == 0) {
      mean = std::move(field);
    } else {
      for (std::size_t j = 0; j < mean.probs.size(); ++j) mean.probs[j] += field.probs[j];
      for (std::size_t j = 0; j < mean.height.size(); ++j) mean.height[j] += field.height[j];
    }
  }
  const double inv = 1.0 / static_cast<double>(scales.size());
  for (auto& v : mean.probs) v *= inv;
  for (auto& v : mean.height) v *= inv;
  return mean;
}

}  // namespace ganet
