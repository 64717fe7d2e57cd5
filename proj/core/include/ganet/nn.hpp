#pragma once

#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "ganet/ops.hpp"
#include "ganet/rng.hpp"
#include "ganet/tensor.hpp"

namespace ganet::nn {

struct ParamRef {
  std::string name;
  Tensor tensor;
  bool no_decay;  // true for norm affine parameters and biases
};

struct BufferRef {
  std::string name;
  std::vector<double>* values;
};

// Base for parameterized graph components. Modules are identity objects:
// they register parameters/buffers/submodules at construction and are
// neither copyable nor movable afterwards.
class Module {
 public:
  Module() = default;
  virtual ~Module() = default;
  Module(const Module&) = delete;
  Module& operator=(const Module&) = delete;

  void set_training(bool on);
  bool training() const { return training_; }

  // Recursive, in registration order, with dotted hierarchical names.
  std::vector<ParamRef> named_parameters() const;
  std::vector<BufferRef> named_buffers() const;
  std::int64_t parameter_count() const;
  void zero_grad() const;

 protected:
  Tensor register_parameter(std::string name, Tensor value, bool no_decay = false);
  std::vector<double>& register_buffer(std::string name, std::vector<double> value);
  void register_submodule(std::string name, Module& child);

 private:
  struct OwnedBuffer {
    std::string name;
    std::unique_ptr<std::vector<double>> values;
  };
  std::vector<ParamRef> params_;
  std::vector<OwnedBuffer> buffers_;
  std::vector<std::pair<std::string, Module*>> children_;
  bool training_ = true;

  void collect_params(const std::string& prefix, std::vector<ParamRef>& out) const;
  void collect_buffers(const std::string& prefix, std::vector<BufferRef>& out) const;
};

// He-normal (variance scaling on fan-out), the initialization used for all
// convolution weights.
void init_he_normal(Tensor& w, std::int64_t fan_out, Rng& rng);

class Conv2d : public Module {
 public:
  Conv2d(int in_channels, int out_channels, int kernel, int stride, int padding, int dilation,
         bool with_bias, Rng& rng);

  Tensor forward(const Tensor& x) const;

  Tensor weight() { return weight_; }
  Tensor bias() { return bias_; }
  bool has_bias() const { return bias_.defined(); }
  int in_channels() const { return in_channels_; }
  int out_channels() const { return out_channels_; }

 private:
  Tensor weight_, bias_;
  int in_channels_, out_channels_, stride_, padding_, dilation_;
};

class BatchNorm2d : public Module {
 public:
  BatchNorm2d(int channels, double momentum, double eps);

  // Training mode normalizes with batch moments and updates running stats;
  // eval mode applies running stats.
  Tensor forward(const Tensor& x);

  Tensor gamma() { return gamma_; }
  Tensor beta() { return beta_; }
  const std::vector<double>& running_mean() const { return running_mean_; }
  const std::vector<double>& running_var() const { return running_var_; }

 private:
  int channels_;
  double momentum_, eps_;
  Tensor gamma_, beta_;
  std::vector<double>& running_mean_;
  std::vector<double>& running_var_;
};

}  // namespace ganet::nn
