#pragma once

#include "ganet/nn.hpp"

namespace ganet {

// How the raw phi/psi dot-product affinities are normalized before they
// weight the semantic aggregation. Softmax per row keeps the aggregation
// scale-stable for large grids; ScaleByCount divides the raw affinities by
// the number of positions.
enum class GacNormalization { kSoftmaxRow, kScaleByCount };

GacNormalization gac_normalization_from_string(const std::string& s);
std::string to_string(GacNormalization n);

// Geometry-aware convolution: affinities computed from two sub-embeddings of
// the geometric features weight a global aggregation of the semantic
// features; the aggregate is projected and added back onto the semantic
// input. The output projection starts at zero, so an untrained block is the
// identity on its semantic input.
class GacFusion : public nn::Module {
 public:
  GacFusion(int channels, int embed_channels, GacNormalization normalization, Rng& rng);

  // semantic and geometric are NCHW with identical shapes and C == channels.
  Tensor forward(const Tensor& semantic, const Tensor& geometric);

  // Normalized affinity matrix, [N, L, L] with L = H*W.
  Tensor build_affinity(const Tensor& geometric) const;
  Tensor build_affinity(const Tensor& geometric, GacNormalization normalization) const;

  int channels() const { return channels_; }
  int embed_channels() const { return embed_channels_; }
  GacNormalization normalization() const { return normalization_; }

  nn::Conv2d& phi_projection() { return phi_; }
  nn::Conv2d& psi_projection() { return psi_; }
  nn::Conv2d& output_projection() { return out_proj_; }

 private:
  int channels_;
  int embed_channels_;
  GacNormalization normalization_;
  nn::Conv2d phi_;
  nn::Conv2d psi_;
  nn::Conv2d out_proj_;
};

// Element-wise summation fusion, the ablation baseline.
Tensor sum_fusion(const Tensor& semantic, const Tensor& geometric);

}  // namespace ganet
