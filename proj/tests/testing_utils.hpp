#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "ganet/rng.hpp"
#include "ganet/tensor.hpp"

namespace ganet::testing {

inline Tensor random_tensor(Shape shape, Rng& rng, double scale = 1.0) {
  Tensor t(std::move(shape));
  for (std::int64_t i = 0; i < t.numel(); ++i) t.data()[i] = rng.normal() * scale;
  return t;
}

struct GradCheckResult {
  double max_err = 0.0;
  std::string where;
};

// Central finite differences against one analytic backward pass. `loss_fn`
// must rebuild its graph from the leaves' current values on every call.
inline GradCheckResult gradcheck(const std::function<Tensor()>& loss_fn,
                                 std::vector<Tensor> leaves, double step = 1e-4) {
  for (auto& t : leaves) {
    t.set_requires_grad(true);
    t.ensure_grad();
    t.zero_grad();
  }
  Tensor loss = loss_fn();
  loss.backward();
  std::vector<std::vector<double>> analytic;
  analytic.reserve(leaves.size());
  for (auto& t : leaves) analytic.push_back(t.grad());

  GradCheckResult res;
  for (std::size_t ti = 0; ti < leaves.size(); ++ti) {
    Tensor t = leaves[ti];
    for (std::int64_t i = 0; i < t.numel(); ++i) {
      const double orig = t.data()[i];
      double fp, fm;
      {
        autograd::NoGradGuard ng;
        t.data()[i] = orig + step;
        fp = loss_fn().item();
        t.data()[i] = orig - step;
        fm = loss_fn().item();
        t.data()[i] = orig;
      }
      const double numeric = (fp - fm) / (2.0 * step);
      const double a = analytic[ti][static_cast<std::size_t>(i)];
      const double err =
          std::abs(a - numeric) / std::max({1.0, std::abs(a), std::abs(numeric)});
      if (err > res.max_err) {
        res.max_err = err;
        res.where = "leaf " + std::to_string(ti) + " index " + std::to_string(i);
      }
    }
  }
  return res;
}

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
  double m = 0.0;
  for (std::int64_t i = 0; i < a.numel(); ++i)
    m = std::max(m, std::abs(a.data()[i] - b.data()[i]));
  return m;
}

inline bool bitwise_equal(const Tensor& a, const Tensor& b) {
  if (a.numel() != b.numel()) return false;
  for (std::int64_t i = 0; i < a.numel(); ++i)
    if (a.data()[i] != b.data()[i]) return false;
  return true;
}

}  // namespace ganet::testing
