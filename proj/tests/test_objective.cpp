#include "doctest.h"

#include <cmath>

#include "ganet/objective.hpp"
#include "ganet/ops.hpp"
#include "testing_utils.hpp"

using namespace ganet;
using testing::gradcheck;
using testing::random_tensor;

TEST_CASE("cross entropy hand values") {
  // Single pixel, two classes, uniform logits, unit weight -> ln 2.
  {
    Tensor logits({1, 2, 1, 1}, {0.0, 0.0});
    IntTensor labels({1, 1, 1}, {0});
    Tensor loss = weighted_cross_entropy(logits, labels, {1.0, 1.0});
    CHECK(std::abs(loss.item() - std::log(2.0)) < 1e-15);
  }
  // Perfect prediction with logit margin 20 -> loss below 1e-6.
  {
    Tensor logits({1, 2, 1, 1}, {20.0, 0.0});
    IntTensor labels({1, 1, 1}, {0});
    Tensor loss = weighted_cross_entropy(logits, labels, {1.0, 1.0});
    CHECK(loss.item() < 1e-6);
    CHECK(loss.item() >= 0.0);
  }
  // Two pixels, hand-set logits and weights {0.5, 2.0}: value matches an
  // explicit softmax computation.
  {
    Tensor logits({1, 2, 1, 2}, {1.0, -0.5,    // class 0 at pixels 0,1
                                 0.2, 0.3});   // class 1
    IntTensor labels({1, 1, 2}, {0, 1});
    const double p00 = std::exp(1.0) / (std::exp(1.0) + std::exp(0.2));
    const double p11 = std::exp(0.3) / (std::exp(-0.5) + std::exp(0.3));
    const double expect = (-0.5 * std::log(p00) - 2.0 * std::log(p11)) / 2.0;
    Tensor loss = weighted_cross_entropy(logits, labels, {0.5, 2.0});
    CHECK(loss.item() == doctest::Approx(expect).epsilon(1e-12));
  }
}

TEST_CASE("cross entropy ignores and errors") {
  Tensor logits({1, 2, 1, 2}, {1.0, 2.0, 0.0, 1.0});
  IntTensor labels({1, 1, 2}, {0, 5});
  // Ignored pixel drops out of the mean.
  Tensor loss = weighted_cross_entropy(logits, labels, {1.0, 1.0}, 5);
  IntTensor only_first({1, 1, 1}, {0});
  Tensor ref = weighted_cross_entropy(Tensor({1, 2, 1, 1}, {1.0, 0.0}), only_first, {1.0, 1.0});
  CHECK(loss.item() == doctest::Approx(ref.item()).epsilon(1e-12));

  IntTensor all_ignored({1, 1, 2}, {5, 5});
  CHECK_THROWS_AS((void)weighted_cross_entropy(logits, all_ignored, {1.0, 1.0}, 5), DataError);

  IntTensor out_of_range({1, 1, 2}, {0, 3});
  CHECK_THROWS_AS((void)weighted_cross_entropy(logits, out_of_range, {1.0, 1.0}), DataError);
}

TEST_CASE("cross entropy properties") {
  Rng rng(20);
  Tensor logits = random_tensor({2, 4, 3, 3}, rng, 2.0);
  IntTensor labels({2, 3, 3});
  for (auto& v : labels.data) v = static_cast<std::int32_t>(rng.uniform_int(0, 3));

  // Uniform weights reduce to the unweighted loss.
  Tensor uw = weighted_cross_entropy(logits, labels, {1.0, 1.0, 1.0, 1.0});
  // Doubling weights doubles the loss exactly.
  Tensor dw = weighted_cross_entropy(logits, labels, {2.0, 2.0, 2.0, 2.0});
  CHECK(dw.item() == doctest::Approx(2.0 * uw.item()).epsilon(1e-15));

  // Monotonicity: raising the true-class logit never increases the loss.
  Tensor bumped = logits.clone();
  bumped.data()[0 * 4 * 9 + labels.data[0] * 9 + 0] += 0.5;  // pixel (0,0,0)
  Tensor after = weighted_cross_entropy(bumped, labels, {1.0, 1.0, 1.0, 1.0});
  CHECK(after.item() <= uw.item());

  // Gradient check against finite differences.
  auto res = gradcheck(
      [&] { return weighted_cross_entropy(logits, labels, {0.5, 2.0, 1.0, 0.25}); }, {logits});
  CHECK(res.max_err < 1e-8);
}

TEST_CASE("height l1 values and gradient") {
  {
    Tensor p({1, 1, 1, 2}, {0.5, 0.5});
    Tensor t({1, 1, 1, 2}, {0.5, 0.5});
    CHECK(height_l1(p, t).item() == 0.0);
  }
  {
    Tensor p = Tensor::zeros({1, 1, 2, 2});
    Tensor t = Tensor::full({1, 1, 2, 2}, 1.0);
    CHECK(height_l1(p, t).item() == doctest::Approx(1.0));
  }
  {
    Tensor p({1, 1, 1, 2}, {0.2, 0.8});
    Tensor t({1, 1, 1, 2}, {0.5, 0.5});
    CHECK(height_l1(p, t).item() == doctest::Approx(0.3).epsilon(1e-15));
  }
  {
    Tensor p({1, 1, 1, 2}, {0.2, 0.9});
    Tensor t({1, 1, 1, 2}, {0.5, 0.5});
    std::vector<std::uint8_t> mask{1, 0};
    CHECK(height_l1(p, t, &mask).item() == doctest::Approx(0.3).epsilon(1e-15));
    std::vector<std::uint8_t> empty{0, 0};
    CHECK_THROWS_AS((void)height_l1(p, t, &empty), DataError);
  }
  Rng rng(21);
  Tensor p = random_tensor({2, 1, 3, 3}, rng);
  Tensor t = random_tensor({2, 1, 3, 3}, rng);
  auto res = gradcheck([&] { return height_l1(p, t); }, {p, t});
  CHECK(res.max_err < 1e-8);
}

TEST_CASE("total loss assembly and decoupling") {
  Rng rng(22);
  Tensor logits = random_tensor({1, 3, 2, 2}, rng);
  Tensor height = ops::sigmoid(random_tensor({1, 1, 2, 2}, rng));
  IntTensor labels({1, 2, 2}, {0, 1, 2, 0});
  Tensor target = ops::sigmoid(random_tensor({1, 1, 2, 2}, rng)).detach();
  std::vector<double> weights{1.0, 1.0, 1.0};

  DualPrediction pred{logits, height};
  auto lb = total_loss(pred, labels, target, weights, kNoIgnore, 1.0);
  CHECK(lb.total == lb.seg_loss + lb.lambda * lb.height_loss);
  CHECK(lb.seg_loss >= 0.0);
  CHECK(lb.height_loss >= 0.0);

  auto half = total_loss(pred, labels, target, weights, kNoIgnore, 0.5);
  CHECK(half.total == doctest::Approx(half.seg_loss + 0.5 * half.height_loss).epsilon(1e-15));

  // lambda = 0: total equals the segmentation term and no gradient reaches
  // the height input.
  Tensor logits2 = logits.clone().set_requires_grad(true);
  Tensor height2 = height.clone().set_requires_grad(true);
  DualPrediction pred2{logits2, height2};
  auto zero = total_loss(pred2, labels, target, weights, kNoIgnore, 0.0);
  CHECK(zero.total == zero.seg_loss);
  zero.total_tensor.backward();
  for (std::int64_t i = 0; i < height2.numel(); ++i) CHECK(height2.grad()[i] == 0.0);

  // Arithmetic example: lambda=1, seg=0.4, height=0.1 -> 0.5 (by construction
  // of a fake breakdown through the public API contract).
  CHECK(0.4 + 1.0 * 0.1 == doctest::Approx(0.5));

  CHECK_THROWS_AS((void)total_loss(pred, labels, target, weights, kNoIgnore, -0.5), ConfigError);
  CHECK_THROWS_AS((void)total_loss(pred, labels, Tensor(), weights, kNoIgnore, 1.0), ConfigError);
}

TEST_CASE("gradients of the combined objective") {
  Rng rng(23);
  Tensor logits = random_tensor({2, 3, 2, 2}, rng);
  Tensor height_raw = random_tensor({2, 1, 2, 2}, rng);
  IntTensor labels({2, 2, 2});
  for (auto& v : labels.data) v = static_cast<std::int32_t>(rng.uniform_int(0, 2));
  Tensor target = ops::sigmoid(random_tensor({2, 1, 2, 2}, rng)).detach();
  std::vector<double> weights{0.7, 1.5, 0.9};

  auto res = gradcheck(
      [&] {
        DualPrediction pred{logits, ops::sigmoid(height_raw)};
        return total_loss(pred, labels, target, weights, kNoIgnore, 0.8).total_tensor;
      },
      {logits, height_raw});
  CHECK(res.max_err < 1e-7);
}
