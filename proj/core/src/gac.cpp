#include "ganet/gac.hpp"

#include <algorithm>
#include <cmath>

namespace ganet {

GacNormalization gac_normalization_from_string(const std::string& s) {
  if (s == "softmax") return GacNormalization::kSoftmaxRow;
  if (s == "scale") return GacNormalization::kScaleByCount;
  GANET_THROW(ConfigError, "unknown gac normalization '", s, "' (expected softmax|scale)");
}

std::string to_string(GacNormalization n) {
  return n == GacNormalization::kSoftmaxRow ? "softmax" : "scale";
}

GacFusion::GacFusion(int channels, int embed_channels, GacNormalization normalization, Rng& rng)
    : channels_(channels),
      embed_channels_(embed_channels),
      normalization_(normalization),
      phi_(channels, embed_channels, 1, 1, 0, 1, /*with_bias=*/true, rng),
      psi_(channels, embed_channels, 1, 1, 0, 1, /*with_bias=*/true, rng),
      out_proj_(channels, channels, 1, 1, 0, 1, /*with_bias=*/true, rng) {
  GANET_CHECK(channels > 0 && embed_channels > 0, ConfigError,
              "GacFusion: channels and embed_channels must be positive");
  register_submodule("phi", phi_);
  register_submodule("psi", psi_);
  register_submodule("out_proj", out_proj_);
  // Zero output projection makes the block start as the identity.
  Tensor w = out_proj_.weight();
  std::fill(w.vec().begin(), w.vec().end(), 0.0);
  // Small-gain scaling for the sub-embeddings keeps the initial affinity
  // logits near zero, so attention starts close to uniform instead of a
  // random hard assignment.
  const double gain = 0.3 / std::sqrt(static_cast<double>(channels));
  for (Tensor t : {phi_.weight(), psi_.weight()}) {
    const double current = std::sqrt(2.0 / static_cast<double>(embed_channels));
    const double rescale = gain / current;
    for (double& v : t.vec()) v *= rescale;
  }
}

Tensor GacFusion::build_affinity(const Tensor& geometric) const {
  return build_affinity(geometric, normalization_);
}

Tensor GacFusion::build_affinity(const Tensor& geometric,
                                 GacNormalization normalization) const {
  GANET_CHECK(geometric.ndim() == 4 && geometric.dim(1) == channels_, ShapeError,
              "build_affinity: expected [N,", channels_, ",H,W], got ",
              shape_str(geometric.shape()));
  Tensor phi_g = phi_.forward(geometric);
  Tensor psi_g = psi_.forward(geometric);
  Tensor raw = ops::bmm_nt(ops::nchw_to_nlc(phi_g), ops::nchw_to_nlc(psi_g));
  if (normalization == GacNormalization::kSoftmaxRow) return ops::softmax_lastdim(raw);
  const std::int64_t positions = geometric.dim(2) * geometric.dim(3);
  return ops::scale(raw, 1.0 / static_cast<double>(positions));
}

Tensor GacFusion::forward(const Tensor& semantic, const Tensor& geometric) {
  GANET_CHECK(same_shape(semantic.shape(), geometric.shape()), ShapeError,
              "gac_forward: semantic ", shape_str(semantic.shape()), " vs geometric ",
              shape_str(geometric.shape()));
  GANET_CHECK(semantic.ndim() == 4 && semantic.dim(1) == channels_, ShapeError,
              "gac_forward: expected [N,", channels_, ",H,W], got ",
              shape_str(semantic.shape()));
  const std::int64_t h = semantic.dim(2), w = semantic.dim(3);
  Tensor affinity = build_affinity(geometric);
  Tensor aggregated = ops::bmm(affinity, ops::nchw_to_nlc(semantic));
  Tensor projected = out_proj_.forward(ops::nlc_to_nchw(aggregated, h, w));
  return ops::add(semantic, projected);
}

Tensor sum_fusion(const Tensor& semantic, const Tensor& geometric) {
  GANET_CHECK(same_shape(semantic.shape(), geometric.shape()), ShapeError,
              "sum_fusion: shape mismatch ", shape_str(semantic.shape()), " vs ",
              shape_str(geometric.shape()));
  return ops::add(semantic, geometric);
}

}  // namespace ganet
