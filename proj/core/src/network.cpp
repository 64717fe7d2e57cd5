#include "ganet/network.hpp"

#include <algorithm>

namespace ganet {

FusionMode fusion_from_string(const std::string& s) {
  if (s == "none") return FusionMode::kNone;
  if (s == "sum") return FusionMode::kSum;
  if (s == "gac") return FusionMode::kGac;
  GANET_THROW(ConfigError, "unknown fusion mode '", s, "' (expected none|sum|gac)");
}

std::string to_string(FusionMode m) {
  switch (m) {
    case FusionMode::kNone: return "none";
    case FusionMode::kSum: return "sum";
    case FusionMode::kGac: return "gac";
  }
  return "?";
}

BackboneDepth backbone_from_string(const std::string& s) {
  if (s == "tiny") return BackboneDepth::kTiny;
  if (s == "50") return BackboneDepth::k50;
  if (s == "101") return BackboneDepth::k101;
  if (s == "152") return BackboneDepth::k152;
  GANET_THROW(ConfigError, "unknown backbone depth '", s, "' (expected tiny|50|101|152)");
}

std::string to_string(BackboneDepth d) {
  switch (d) {
    case BackboneDepth::kTiny: return "tiny";
    case BackboneDepth::k50: return "50";
    case BackboneDepth::k101: return "101";
    case BackboneDepth::k152: return "152";
  }
  return "?";
}

void NetworkConfig::validate() const {
  GANET_CHECK(num_classes >= 2, ConfigError, "num_classes must be >= 2, got ", num_classes);
  GANET_CHECK(in_channels >= 1, ConfigError, "in_channels must be >= 1");
  GANET_CHECK(!aspp_rates.empty(), ConfigError, "aspp_rates must not be empty");
  for (int r : aspp_rates)
    GANET_CHECK(r >= 1, ConfigError, "aspp rate must be >= 1, got ", r);
  GANET_CHECK(decoder_channels >= 4, ConfigError, "decoder_channels must be >= 4");
  GANET_CHECK(low_level_channels >= 4, ConfigError, "low_level_channels must be >= 4");
  GANET_CHECK(gac_embed_channels >= 0, ConfigError, "gac_embed_channels must be >= 0");
  GANET_CHECK(patch_size >= 16 && patch_size % 16 == 0, ConfigError,
              "patch_size must be a positive multiple of 16, got ", patch_size);
}

int NetworkConfig::effective_gac_embed() const {
  if (gac_embed_channels > 0) return gac_embed_channels;
  return std::max(1, decoder_channels / 2);
}

namespace detail_net {

ConvBnRelu::ConvBnRelu(int in_ch, int out_ch, int kernel, int stride, int padding, int dilation,
                       double bn_momentum, double bn_eps, Rng& rng)
    : conv_(in_ch, out_ch, kernel, stride, padding, dilation, /*with_bias=*/false, rng),
      bn_(out_ch, bn_momentum, bn_eps) {
  register_submodule("conv", conv_);
  register_submodule("bn", bn_);
}

Tensor ConvBnRelu::forward(const Tensor& x) { return ops::relu(bn_.forward(conv_.forward(x))); }

namespace {

// Two 3x3 convolutions with an identity (or projected) shortcut.
class BasicBlock : public nn::Module {
 public:
  BasicBlock(int in_ch, int out_ch, int stride, double bn_momentum, double bn_eps, Rng& rng)
      : conv1_(in_ch, out_ch, 3, stride, 1, 1, false, rng),
        bn1_(out_ch, bn_momentum, bn_eps),
        conv2_(out_ch, out_ch, 3, 1, 1, 1, false, rng),
        bn2_(out_ch, bn_momentum, bn_eps) {
    register_submodule("conv1", conv1_);
    register_submodule("bn1", bn1_);
    register_submodule("conv2", conv2_);
    register_submodule("bn2", bn2_);
    if (stride != 1 || in_ch != out_ch) {
      proj_conv_ = std::make_unique<nn::Conv2d>(in_ch, out_ch, 1, stride, 0, 1, false, rng);
      proj_bn_ = std::make_unique<nn::BatchNorm2d>(out_ch, bn_momentum, bn_eps);
      register_submodule("proj_conv", *proj_conv_);
      register_submodule("proj_bn", *proj_bn_);
    }
  }

  Tensor forward(const Tensor& x) {
    Tensor y = ops::relu(bn1_.forward(conv1_.forward(x)));
    y = bn2_.forward(conv2_.forward(y));
    Tensor shortcut = proj_conv_ ? proj_bn_->forward(proj_conv_->forward(x)) : x;
    return ops::relu(ops::add(y, shortcut));
  }

 private:
  nn::Conv2d conv1_;
  nn::BatchNorm2d bn1_;
  nn::Conv2d conv2_;
  nn::BatchNorm2d bn2_;
  std::unique_ptr<nn::Conv2d> proj_conv_;
  std::unique_ptr<nn::BatchNorm2d> proj_bn_;
};

// 1x1 -> 3x3 -> 1x1 residual bottleneck with 4x expansion.
class Bottleneck : public nn::Module {
 public:
  static constexpr int kExpansion = 4;

  Bottleneck(int in_ch, int mid_ch, int stride, int dilation, double bn_momentum, double bn_eps,
             Rng& rng)
      : conv1_(in_ch, mid_ch, 1, 1, 0, 1, false, rng),
        bn1_(mid_ch, bn_momentum, bn_eps),
        conv2_(mid_ch, mid_ch, 3, stride, dilation, dilation, false, rng),
        bn2_(mid_ch, bn_momentum, bn_eps),
        conv3_(mid_ch, mid_ch * kExpansion, 1, 1, 0, 1, false, rng),
        bn3_(mid_ch * kExpansion, bn_momentum, bn_eps) {
    register_submodule("conv1", conv1_);
    register_submodule("bn1", bn1_);
    register_submodule("conv2", conv2_);
    register_submodule("bn2", bn2_);
    register_submodule("conv3", conv3_);
    register_submodule("bn3", bn3_);
    if (stride != 1 || in_ch != mid_ch * kExpansion) {
      proj_conv_ =
          std::make_unique<nn::Conv2d>(in_ch, mid_ch * kExpansion, 1, stride, 0, 1, false, rng);
      proj_bn_ = std::make_unique<nn::BatchNorm2d>(mid_ch * kExpansion, bn_momentum, bn_eps);
      register_submodule("proj_conv", *proj_conv_);
      register_submodule("proj_bn", *proj_bn_);
    }
  }

  Tensor forward(const Tensor& x) {
    Tensor y = ops::relu(bn1_.forward(conv1_.forward(x)));
    y = ops::relu(bn2_.forward(conv2_.forward(y)));
    y = bn3_.forward(conv3_.forward(y));
    Tensor shortcut = proj_conv_ ? proj_bn_->forward(proj_conv_->forward(x)) : x;
    return ops::relu(ops::add(y, shortcut));
  }

 private:
  nn::Conv2d conv1_;
  nn::BatchNorm2d bn1_;
  nn::Conv2d conv2_;
  nn::BatchNorm2d bn2_;
  nn::Conv2d conv3_;
  nn::BatchNorm2d bn3_;
  std::unique_ptr<nn::Conv2d> proj_conv_;
  std::unique_ptr<nn::BatchNorm2d> proj_bn_;
};

// Reduced-width residual backbone for CPU-scale runs. Low-level features at
// stride 4, high-level at stride 16.
class TinyBackbone : public Backbone {
 public:
  TinyBackbone(int in_channels, double bn_momentum, double bn_eps, Rng& rng) {
    stem_ = std::make_unique<ConvBnRelu>(in_channels, 16, 3, 2, 1, 1, bn_momentum, bn_eps, rng);
    register_submodule("stem", *stem_);
    stage1_ = std::make_unique<BasicBlock>(16, 24, 2, bn_momentum, bn_eps, rng);
    register_submodule("stage1", *stage1_);
    stage2_ = std::make_unique<BasicBlock>(24, 32, 2, bn_momentum, bn_eps, rng);
    register_submodule("stage2", *stage2_);
    stage3_ = std::make_unique<BasicBlock>(32, 48, 2, bn_momentum, bn_eps, rng);
    register_submodule("stage3", *stage3_);
  }

  Features forward(const Tensor& x) override {
    Tensor s = stem_->forward(x);
    Tensor low = stage1_->forward(s);
    Tensor mid = stage2_->forward(low);
    Tensor high = stage3_->forward(mid);
    return {{low, 4}, {high, 16}};
  }

  int low_channels() const override { return 24; }
  int high_channels() const override { return 48; }

 private:
  std::unique_ptr<ConvBnRelu> stem_;
  std::unique_ptr<BasicBlock> stage1_;
  std::unique_ptr<BasicBlock> stage2_;
  std::unique_ptr<BasicBlock> stage3_;
};

// Standard bottleneck ResNet with the last stage dilated instead of strided,
// so high-level features stay at stride 16.
class ResNetBackbone : public Backbone {
 public:
  ResNetBackbone(int in_channels, const std::vector<int>& block_counts, double bn_momentum,
                 double bn_eps, Rng& rng) {
    stem_ = std::make_unique<ConvBnRelu>(in_channels, 64, 7, 2, 3, 1, bn_momentum, bn_eps, rng);
    register_submodule("stem", *stem_);
    int in_ch = 64;
    const int mids[4] = {64, 128, 256, 512};
    const int strides[4] = {1, 2, 2, 1};
    const int dilations[4] = {1, 1, 1, 2};
    for (int stage = 0; stage < 4; ++stage) {
      for (int b = 0; b < block_counts[static_cast<std::size_t>(stage)]; ++b) {
        const int stride = b == 0 ? strides[stage] : 1;
        auto block = std::make_unique<Bottleneck>(in_ch, mids[stage], stride, dilations[stage],
                                                  bn_momentum, bn_eps, rng);
        register_submodule(msg("layer", stage + 1, ".", b), *block);
        blocks_[static_cast<std::size_t>(stage)].push_back(std::move(block));
        in_ch = mids[stage] * Bottleneck::kExpansion;
      }
    }
  }

  Features forward(const Tensor& x) override {
    Tensor y = stem_->forward(x);
    y = ops::max_pool2d(y, 3, 2, 1);
    for (auto& b : blocks_[0]) y = b->forward(y);
    Tensor low = y;  // stride 4, 256 channels
    for (auto& b : blocks_[1]) y = b->forward(y);
    for (auto& b : blocks_[2]) y = b->forward(y);
    for (auto& b : blocks_[3]) y = b->forward(y);
    return {{low, 4}, {y, 16}};
  }

  int low_channels() const override { return 256; }
  int high_channels() const override { return 2048; }

 private:
  std::unique_ptr<ConvBnRelu> stem_;
  std::vector<std::unique_ptr<Bottleneck>> blocks_[4];
};

std::vector<int> resnet_blocks(BackboneDepth d) {
  switch (d) {
    case BackboneDepth::k50: return {3, 4, 6, 3};
    case BackboneDepth::k101: return {3, 4, 23, 3};
    case BackboneDepth::k152: return {3, 8, 36, 3};
    default: GANET_THROW(ConfigError, "resnet_blocks called for non-resnet depth");
  }
}

}  // namespace

// Multi-scale context: 1x1 branch, one dilated 3x3 branch per rate, and a
// pooled branch broadcast back to the grid, concatenated and projected.
class Aspp : public nn::Module {
 public:
  Aspp(int in_ch, int out_ch, const std::vector<int>& rates, double bn_momentum, double bn_eps,
       Rng& rng) {
    conv1x1_ = std::make_unique<ConvBnRelu>(in_ch, out_ch, 1, 1, 0, 1, bn_momentum, bn_eps, rng);
    register_submodule("conv1x1", *conv1x1_);
    for (std::size_t i = 0; i < rates.size(); ++i) {
      auto branch = std::make_unique<ConvBnRelu>(in_ch, out_ch, 3, 1, rates[i], rates[i],
                                                 bn_momentum, bn_eps, rng);
      register_submodule(msg("rate", rates[i]), *branch);
      rate_branches_.push_back(std::move(branch));
    }
    pool_conv_ = std::make_unique<ConvBnRelu>(in_ch, out_ch, 1, 1, 0, 1, bn_momentum, bn_eps, rng);
    register_submodule("pool_conv", *pool_conv_);
    const int concat_ch = out_ch * static_cast<int>(rates.size() + 2);
    project_ = std::make_unique<ConvBnRelu>(concat_ch, out_ch, 1, 1, 0, 1, bn_momentum, bn_eps, rng);
    register_submodule("project", *project_);
  }

  Tensor forward(const Tensor& x) {
    const std::int64_t h = x.dim(2), w = x.dim(3);
    std::vector<Tensor> branches;
    branches.push_back(conv1x1_->forward(x));
    for (auto& b : rate_branches_) branches.push_back(b->forward(x));
    Tensor pooled = pool_conv_->forward(ops::global_avg_pool(x));
    branches.push_back(ops::bilinear_resize(pooled, h, w));
    return project_->forward(ops::concat_channels(branches));
  }

 private:
  std::unique_ptr<ConvBnRelu> conv1x1_;
  std::vector<std::unique_ptr<ConvBnRelu>> rate_branches_;
  std::unique_ptr<ConvBnRelu> pool_conv_;
  std::unique_ptr<ConvBnRelu> project_;
};

}  // namespace detail_net

GANetModel::GANetModel(const NetworkConfig& config, Rng& rng) : config_(config) {
  config_.validate();
  using namespace detail_net;
  if (config_.backbone_depth == BackboneDepth::kTiny) {
    backbone_ = std::make_unique<TinyBackbone>(config_.in_channels, config_.bn_momentum,
                                               config_.bn_eps, rng);
  } else {
    backbone_ = std::make_unique<ResNetBackbone>(config_.in_channels,
                                                 resnet_blocks(config_.backbone_depth),
                                                 config_.bn_momentum, config_.bn_eps, rng);
  }
  register_submodule("backbone", *backbone_);

  aspp_ = std::make_unique<Aspp>(backbone_->high_channels(), config_.decoder_channels,
                                 config_.aspp_rates, config_.bn_momentum, config_.bn_eps, rng);
  register_submodule("aspp", *aspp_);

  low_proj_ = std::make_unique<ConvBnRelu>(backbone_->low_channels(), config_.low_level_channels,
                                           1, 1, 0, 1, config_.bn_momentum, config_.bn_eps, rng);
  register_submodule("low_proj", *low_proj_);

  const int combined = config_.decoder_channels + config_.low_level_channels;
  semantic_branch_ = std::make_unique<ConvBnRelu>(combined, config_.decoder_channels, 3, 1, 1, 1,
                                                  config_.bn_momentum, config_.bn_eps, rng);
  register_submodule("semantic_branch", *semantic_branch_);
  geometric_branch_ = std::make_unique<ConvBnRelu>(combined, config_.decoder_channels, 3, 1, 1, 1,
                                                   config_.bn_momentum, config_.bn_eps, rng);
  register_submodule("geometric_branch", *geometric_branch_);

  if (config_.fusion == FusionMode::kGac) {
    gac_ = std::make_unique<GacFusion>(config_.decoder_channels, config_.effective_gac_embed(),
                                       config_.gac_normalization, rng);
    register_submodule("gac", *gac_);
  }

  seg_head_ = std::make_unique<nn::Conv2d>(config_.decoder_channels, config_.num_classes, 3, 1, 1,
                                           1, /*with_bias=*/true, rng);
  register_submodule("seg_head", *seg_head_);
  height_head_ = std::make_unique<nn::Conv2d>(config_.decoder_channels, 1, 3, 1, 1, 1,
                                              /*with_bias=*/true, rng);
  register_submodule("height_head", *height_head_);
}

GANetModel::~GANetModel() = default;

DualPrediction GANetModel::forward(const Tensor& input) {
  GANET_CHECK(input.ndim() == 4, ShapeError, "forward: expected NCHW input, got ",
              shape_str(input.shape()));
  GANET_CHECK(input.dim(1) == config_.in_channels, ShapeError, "forward: expected ",
              config_.in_channels, " input channels, got ", input.dim(1));
  const std::int64_t h = input.dim(2), w = input.dim(3);
  GANET_CHECK(h % 16 == 0 && w % 16 == 0, ShapeError, "forward: spatial size ", h, "x", w,
              " not divisible by 16; pad the input to a multiple of 16");

  auto feats = backbone_->forward(input);
  Tensor ctx = aspp_->forward(feats.high.values);
  Tensor up = ops::bilinear_resize(ctx, h / 4, w / 4);
  Tensor low = low_proj_->forward(feats.low.values);
  Tensor combined = ops::concat_channels({up, low});

  Tensor semantic = semantic_branch_->forward(combined);
  Tensor geometric = geometric_branch_->forward(combined);

  Tensor height =
      ops::sigmoid(height_head_->forward(ops::bilinear_resize(geometric, h, w)));

  Tensor fused;
  switch (config_.fusion) {
    case FusionMode::kNone: fused = semantic; break;
    case FusionMode::kSum: fused = sum_fusion(semantic, geometric); break;
    case FusionMode::kGac: fused = gac_->forward(semantic, geometric); break;
  }
  Tensor logits = seg_head_->forward(ops::bilinear_resize(fused, h, w));
  return {logits, height};
}

std::unique_ptr<GANetModel> build_network(const NetworkConfig& config, Rng& rng) {
  config.validate();
  return std::make_unique<GANetModel>(config, rng);
}

}  // namespace ganet
