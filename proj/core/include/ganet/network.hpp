#pragma once

#include <memory>
#include <string>
#include <vector>

#include "ganet/gac.hpp"
#include "ganet/nn.hpp"

namespace ganet {

enum class FusionMode { kNone, kSum, kGac };
FusionMode fusion_from_string(const std::string& s);
std::string to_string(FusionMode m);

enum class BackboneDepth { kTiny, k50, k101, k152 };
BackboneDepth backbone_from_string(const std::string& s);
std::string to_string(BackboneDepth d);

// A dense activation grid plus its downscale factor relative to the network
// input.
struct FeatureMap {
  Tensor values;  // N,C,Hf,Wf
  int stride = 1;
};

struct NetworkConfig {
  BackboneDepth backbone_depth = BackboneDepth::k101;
  int num_classes = 6;
  int in_channels = 3;
  std::vector<int> aspp_rates{6, 12, 18};
  int decoder_channels = 256;
  int gac_embed_channels = 0;  // 0 -> decoder_channels / 2
  int low_level_channels = 48;
  int patch_size = 320;
  FusionMode fusion = FusionMode::kGac;
  GacNormalization gac_normalization = GacNormalization::kSoftmaxRow;
  double bn_momentum = 0.1;
  double bn_eps = 1e-5;

  void validate() const;
  int effective_gac_embed() const;
};

// Joint prediction for one batch: segmentation logits and a height map
// bounded to [0,1], both at input resolution.
struct DualPrediction {
  Tensor seg_logits;  // N,K,H,W
  Tensor height;      // N,1,H,W
};

namespace detail_net {

class ConvBnRelu : public nn::Module {
 public:
  ConvBnRelu(int in_ch, int out_ch, int kernel, int stride, int padding, int dilation,
             double bn_momentum, double bn_eps, Rng& rng);
  Tensor forward(const Tensor& x);

 private:
  nn::Conv2d conv_;
  nn::BatchNorm2d bn_;
};

class Backbone : public nn::Module {
 public:
  struct Features {
    FeatureMap low;   // stride 4
    FeatureMap high;  // stride 16
  };
  virtual Features forward(const Tensor& x) = 0;
  virtual int low_channels() const = 0;
  virtual int high_channels() const = 0;
};

class Aspp;  // defined in network.cpp

}  // namespace detail_net

// The GANet graph: shared encoder (backbone + ASPP + low-level skip), two
// task branches producing semantic and geometric embeddings, a height head
// and a segmentation head fused per config.
class GANetModel : public nn::Module {
 public:
  GANetModel(const NetworkConfig& config, Rng& rng);
  ~GANetModel() override;

  DualPrediction forward(const Tensor& input);

  const NetworkConfig& config() const { return config_; }
  GacFusion* gac() { return gac_.get(); }

 private:
  NetworkConfig config_;
  std::unique_ptr<detail_net::Backbone> backbone_;
  std::unique_ptr<detail_net::Aspp> aspp_;
  std::unique_ptr<detail_net::ConvBnRelu> low_proj_;
  std::unique_ptr<detail_net::ConvBnRelu> semantic_branch_;
  std::unique_ptr<detail_net::ConvBnRelu> geometric_branch_;
  std::unique_ptr<GacFusion> gac_;
  std::unique_ptr<nn::Conv2d> seg_head_;
  std::unique_ptr<nn::Conv2d> height_head_;
};

// Validates the config and wires the graph; parameters are drawn from `rng`
// with He initialization in a fixed traversal order.
std::unique_ptr<GANetModel> build_network(const NetworkConfig& config, Rng& rng);

}  // namespace ganet
