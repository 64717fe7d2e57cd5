#include "ganet/nn.hpp"

#include <cmath>

namespace ganet::nn {

void Module::set_training(bool on) {
  training_ = on;
  for (auto& [name, child] : children_) child->set_training(on);
}

std::vector<ParamRef> Module::named_parameters() const {
  std::vector<ParamRef> out;
  collect_params("", out);
  return out;
}

std::vector<BufferRef> Module::named_buffers() const {
  std::vector<BufferRef> out;
  collect_buffers("", out);
  return out;
}

std::int64_t Module::parameter_count() const {
  std::int64_t n = 0;
  for (const auto& p : named_parameters()) n += p.tensor.numel();
  return n;
}

void Module::zero_grad() const {
  for (auto& p : named_parameters()) {
    Tensor t = p.tensor;
    t.zero_grad();
  }
}

Tensor Module::register_parameter(std::string name, Tensor value, bool no_decay) {
  value.set_requires_grad(true);
  params_.push_back({std::move(name), value, no_decay});
  return params_.back().tensor;
}

std::vector<double>& Module::register_buffer(std::string name, std::vector<double> value) {
  buffers_.push_back({std::move(name), std::make_unique<std::vector<double>>(std::move(value))});
  return *buffers_.back().values;
}

void Module::register_submodule(std::string name, Module& child) {
  children_.emplace_back(std::move(name), &child);
}

void Module::collect_params(const std::string& prefix, std::vector<ParamRef>& out) const {
  for (const auto& p : params_)
    out.push_back({prefix.empty() ? p.name : prefix + "." + p.name, p.tensor, p.no_decay});
  for (const auto& [name, child] : children_)
    child->collect_params(prefix.empty() ? name : prefix + "." + name, out);
}

void Module::collect_buffers(const std::string& prefix, std::vector<BufferRef>& out) const {
  for (const auto& b : buffers_)
    out.push_back({prefix.empty() ? b.name : prefix + "." + b.name, b.values.get()});
  for (const auto& [name, child] : children_)
    child->collect_buffers(prefix.empty() ? name : prefix + "." + name, out);
}

void init_he_normal(Tensor& w, std::int64_t fan_out, Rng& rng) {
  const double stddev = std::sqrt(2.0 / static_cast<double>(fan_out));
  double* p = w.data();
  const std::int64_t n = w.numel();
  for (std::int64_t i = 0; i < n; ++i) p[i] = rng.normal() * stddev;
}

Conv2d::Conv2d(int in_channels, int out_channels, int kernel, int stride, int padding,
               int dilation, bool with_bias, Rng& rng)
    : in_channels_(in_channels),
      out_channels_(out_channels),
      stride_(stride),
      padding_(padding),
      dilation_(dilation) {
  GANET_CHECK(in_channels > 0 && out_channels > 0 && kernel > 0 && stride > 0 && dilation > 0,
              ConfigError, "Conv2d: invalid geometry");
  Tensor w({out_channels, in_channels, kernel, kernel});
  init_he_normal(w, static_cast<std::int64_t>(out_channels) * kernel * kernel, rng);
  weight_ = register_parameter("weight", w);
  if (with_bias) bias_ = register_parameter("bias", Tensor({out_channels}), /*no_decay=*/true);
}

Tensor Conv2d::forward(const Tensor& x) const {
  return ops::conv2d(x, weight_, bias_, stride_, padding_, dilation_);
}

BatchNorm2d::BatchNorm2d(int channels, double momentum, double eps)
    : channels_(channels),
      momentum_(momentum),
      eps_(eps),
      gamma_(register_parameter("gamma", Tensor::full({channels}, 1.0), /*no_decay=*/true)),
      beta_(register_parameter("beta", Tensor({channels}), /*no_decay=*/true)),
      running_mean_(register_buffer("running_mean", std::vector<double>(channels, 0.0))),
      running_var_(register_buffer("running_var", std::vector<double>(channels, 1.0))) {}

Tensor BatchNorm2d::forward(const Tensor& x) {
  if (!training())
    return ops::batch_norm_eval(x, gamma_, beta_, running_mean_, running_var_, eps_);
  ops::BatchMoments saved;
  Tensor out = ops::batch_norm_train(x, gamma_, beta_, eps_, &saved);
  // Running variance uses the unbiased estimate, normalization the biased one.
  const double unbias = saved.count > 1
                            ? static_cast<double>(saved.count) / static_cast<double>(saved.count - 1)
                            : 1.0;
  for (int c = 0; c < channels_; ++c) {
    running_mean_[c] = (1.0 - momentum_) * running_mean_[c] + momentum_ * saved.mean[c];
    running_var_[c] = (1.0 - momentum_) * running_var_[c] + momentum_ * saved.var[c] * unbias;
  }
  return out;
}

}  // namespace ganet::nn
