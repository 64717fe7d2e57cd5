#include "doctest.h"

#include <cmath>

#include "ganet/network.hpp"
#include "ganet/objective.hpp"
#include "testing_utils.hpp"

using namespace ganet;
using testing::random_tensor;

namespace {

NetworkConfig tiny_config(FusionMode fusion, int num_classes = 4) {
  NetworkConfig cfg;
  cfg.backbone_depth = BackboneDepth::kTiny;
  cfg.num_classes = num_classes;
  cfg.decoder_channels = 16;
  cfg.low_level_channels = 8;
  cfg.patch_size = 64;
  cfg.fusion = fusion;
  return cfg;
}

}  // namespace

TEST_CASE("config validation") {
  NetworkConfig bad = tiny_config(FusionMode::kNone);
  bad.num_classes = 1;
  Rng rng(1);
  CHECK_THROWS_AS((void)build_network(bad, rng), ConfigError);
  bad = tiny_config(FusionMode::kNone);
  bad.aspp_rates = {};
  CHECK_THROWS_AS((void)build_network(bad, rng), ConfigError);
  bad = tiny_config(FusionMode::kNone);
  bad.patch_size = 100;
  CHECK_THROWS_AS((void)build_network(bad, rng), ConfigError);

  CHECK(fusion_from_string("gac") == FusionMode::kGac);
  CHECK_THROWS_AS((void)fusion_from_string("bogus"), ConfigError);
  CHECK(backbone_from_string("101") == BackboneDepth::k101);
  CHECK_THROWS_AS((void)backbone_from_string("18"), ConfigError);
}

TEST_CASE("output shapes and ranges") {
  Rng rng(2);
  auto net = build_network(tiny_config(FusionMode::kGac), rng);
  net->set_training(false);
  autograd::NoGradGuard ng;

  for (std::int64_t size : {64, 96}) {
    Tensor x = random_tensor({2, 3, size, size}, rng);
    auto pred = net->forward(x);
    CHECK(pred.seg_logits.shape() == Shape({2, 4, size, size}));
    CHECK(pred.height.shape() == Shape({2, 1, size, size}));
    for (std::int64_t i = 0; i < pred.height.numel(); ++i) {
      CHECK(pred.height.data()[i] >= 0.0);
      CHECK(pred.height.data()[i] <= 1.0);
    }
    for (std::int64_t i = 0; i < pred.seg_logits.numel(); ++i)
      CHECK(std::isfinite(pred.seg_logits.data()[i]));
  }

  // Non-multiple-of-16 input is rejected with a padding hint.
  Tensor bad = random_tensor({1, 3, 60, 64}, rng);
  CHECK_THROWS_WITH_AS((void)net->forward(bad), doctest::Contains("pad"), ShapeError);
}

TEST_CASE("eval forward is deterministic and batch-consistent") {
  Rng rng(3);
  auto net = build_network(tiny_config(FusionMode::kGac), rng);
  net->set_training(false);
  autograd::NoGradGuard ng;

  Tensor one = random_tensor({1, 3, 64, 64}, rng);
  Tensor two({2, 3, 64, 64});
  for (int b = 0; b < 2; ++b)
    for (std::int64_t i = 0; i < one.numel(); ++i) two.data()[b * one.numel() + i] = one.data()[i];

  auto p1 = net->forward(two);
  // Identical images in one batch produce identical predictions.
  for (std::int64_t i = 0; i < p1.seg_logits.numel() / 2; ++i)
    CHECK(p1.seg_logits.data()[i] == p1.seg_logits.data()[p1.seg_logits.numel() / 2 + i]);

  // Re-running the same input is bitwise identical.
  auto p2 = net->forward(two);
  CHECK(testing::bitwise_equal(p1.seg_logits, p2.seg_logits));
  CHECK(testing::bitwise_equal(p1.height, p2.height));

  // A flipped input produces different raw activations (no exact flip
  // equivariance is claimed).
  Tensor flipped = one.clone();
  for (std::int64_t c = 0; c < 3; ++c)
    for (std::int64_t r = 0; r < 64; ++r)
      for (std::int64_t col = 0; col < 64; ++col)
        flipped.set({0, c, r, col}, one.at({0, c, r, 63 - col}));
  Tensor both({2, 3, 64, 64});
  for (std::int64_t i = 0; i < one.numel(); ++i) {
    both.data()[i] = one.data()[i];
    both.data()[one.numel() + i] = flipped.data()[i];
  }
  auto pf = net->forward(both);
  double diff = 0.0;
  for (std::int64_t i = 0; i < pf.seg_logits.numel() / 2; ++i)
    diff = std::max(diff, std::abs(pf.seg_logits.data()[i] -
                                   pf.seg_logits.data()[pf.seg_logits.numel() / 2 + i]));
  CHECK(diff > 0.0);
}

TEST_CASE("fusion modes differ only in the fusion stage") {
  Rng rng_a(4), rng_b(4), rng_c(4);
  auto none = build_network(tiny_config(FusionMode::kNone), rng_a);
  auto sum = build_network(tiny_config(FusionMode::kSum), rng_b);
  auto gac = build_network(tiny_config(FusionMode::kGac), rng_c);
  CHECK(none->parameter_count() == sum->parameter_count());
  CHECK(none->parameter_count() < gac->parameter_count());
  CHECK(gac->gac() != nullptr);
  CHECK(none->gac() == nullptr);
}

TEST_CASE("with fusion none the segmentation path ignores the height branch") {
  Rng rng(5);
  auto net = build_network(tiny_config(FusionMode::kNone), rng);
  net->set_training(false);
  autograd::NoGradGuard ng;
  Tensor x = random_tensor({1, 3, 64, 64}, rng);
  auto before = net->forward(x);

  // Perturb every parameter downstream of the branch split on the height
  // side: the geometric embedding convolution and the height head.
  for (auto& p : net->named_parameters()) {
    if (p.name.find("geometric_branch") != std::string::npos ||
        p.name.find("height_head") != std::string::npos) {
      Tensor t = p.tensor;
      for (std::int64_t i = 0; i < t.numel(); ++i) t.data()[i] += 0.37;
    }
  }
  auto after = net->forward(x);
  CHECK(testing::bitwise_equal(before.seg_logits, after.seg_logits));
  CHECK_FALSE(testing::bitwise_equal(before.height, after.height));
}

TEST_CASE("aspp structure follows the configured rates") {
  // Removing one dilation rate removes exactly that branch (3x3 conv + BN)
  // plus the matching fan-in slice of the concat projection.
  NetworkConfig three = tiny_config(FusionMode::kNone);
  NetworkConfig two = tiny_config(FusionMode::kNone);
  two.aspp_rates = {6, 12};
  Rng ra(6), rb(6);
  auto net3 = build_network(three, ra);
  auto net2 = build_network(two, rb);
  const std::int64_t a = three.decoder_channels;  // ASPP branch width
  const std::int64_t high_ch = 48;                // tiny backbone high-level width
  const std::int64_t branch = high_ch * a * 9 + 2 * a;
  const std::int64_t projection_slice = a * a;
  CHECK(net3->parameter_count() - net2->parameter_count() == branch + projection_slice);

  int rate_branches = 0;
  bool has_pool = false, has_1x1 = false;
  for (auto& p : net3->named_parameters()) {
    if (p.name.find("aspp.rate") != std::string::npos && p.name.find("conv.weight") != std::string::npos)
      ++rate_branches;
    if (p.name.find("aspp.pool_conv") != std::string::npos) has_pool = true;
    if (p.name.find("aspp.conv1x1") != std::string::npos) has_1x1 = true;
  }
  // Branch count = rates + 1x1 + pooling.
  CHECK(rate_branches == 3);
  CHECK(has_pool);
  CHECK(has_1x1);
}

TEST_CASE("initialization is deterministic in the seed") {
  NetworkConfig cfg = tiny_config(FusionMode::kGac);
  Rng a(77), b(77), c(78);
  auto na = build_network(cfg, a);
  auto nb = build_network(cfg, b);
  auto nc = build_network(cfg, c);
  auto pa = na->named_parameters();
  auto pb = nb->named_parameters();
  auto pc = nc->named_parameters();
  REQUIRE(pa.size() == pb.size());
  bool all_equal_ab = true, all_equal_ac = true;
  for (std::size_t i = 0; i < pa.size(); ++i) {
    CHECK(pa[i].name == pb[i].name);
    if (!testing::bitwise_equal(pa[i].tensor, pb[i].tensor)) all_equal_ab = false;
    if (!testing::bitwise_equal(pa[i].tensor, pc[i].tensor)) all_equal_ac = false;
  }
  CHECK(all_equal_ab);
  CHECK_FALSE(all_equal_ac);
}

TEST_CASE("resnet depths build with increasing capacity") {
  NetworkConfig cfg;
  cfg.num_classes = 4;
  cfg.decoder_channels = 64;
  cfg.low_level_channels = 16;
  cfg.patch_size = 64;
  cfg.fusion = FusionMode::kNone;

  std::int64_t count50 = 0, count101 = 0;
  {
    cfg.backbone_depth = BackboneDepth::k50;
    Rng rng(8);
    auto net = build_network(cfg, rng);
    count50 = net->parameter_count();
    // One cheap forward to exercise the bottleneck path.
    net->set_training(false);
    autograd::NoGradGuard ng;
    Tensor x = random_tensor({1, 3, 32, 32}, rng, 0.5);
    auto pred = net->forward(x);
    CHECK(pred.seg_logits.shape() == Shape({1, 4, 32, 32}));
  }
  {
    cfg.backbone_depth = BackboneDepth::k101;
    Rng rng(8);
    auto net = build_network(cfg, rng);
    count101 = net->parameter_count();
  }
  CHECK(count50 > 20'000'000);
  CHECK(count101 > count50);
  {
    cfg.backbone_depth = BackboneDepth::k152;
    Rng rng(8);
    auto net = build_network(cfg, rng);
    CHECK(net->parameter_count() > count101);
  }
}

TEST_CASE("train mode uses batch statistics, eval mode running statistics") {
  Rng rng(9);
  auto net = build_network(tiny_config(FusionMode::kNone), rng);
  Tensor x = random_tensor({2, 3, 64, 64}, rng);

  net->set_training(true);
  auto train_pred = net->forward(x);
  // Running statistics moved away from their init, so eval output differs
  // from a fresh net's output would; more directly: train vs eval outputs on
  // the same input differ.
  net->set_training(false);
  autograd::NoGradGuard ng;
  auto eval_pred = net->forward(x);
  CHECK_FALSE(testing::bitwise_equal(train_pred.seg_logits, eval_pred.seg_logits));
}
