#pragma once

#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <string>
#include <vector>

#include "ganet/errors.hpp"

namespace ganet {

using Shape = std::vector<std::int64_t>;

std::int64_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);
bool same_shape(const Shape& a, const Shape& b);

class Tensor;

struct TensorImpl;

namespace autograd {

// One differentiable operation in the (dynamic) graph. `backward` reads the
// output's gradient and accumulates into the gradients of `inputs`.
struct Node {
  std::string op;
  std::vector<Tensor> inputs;
  std::function<void(const TensorImpl& out)> backward;
};

bool grad_enabled();

// Disables graph recording in the current thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

}  // namespace autograd

struct TensorImpl {
  Shape shape;
  std::vector<double> data;
  bool requires_grad = false;
  std::vector<double> grad;  // allocated lazily, same numel as data
  std::shared_ptr<autograd::Node> creator;
};

// Dense double-precision n-d array with reverse-mode autodiff. Copying a
// Tensor copies the handle, not the buffer.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape);
  Tensor(Shape shape, std::vector<double> values);

  static Tensor zeros(Shape shape);
  static Tensor full(Shape shape, double value);
  static Tensor scalar(double value);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const;
  std::int64_t ndim() const { return static_cast<std::int64_t>(shape().size()); }
  std::int64_t dim(int i) const;
  std::int64_t numel() const;

  // A Tensor is a shared handle; constness is shallow (like shared_ptr), so
  // buffer access and gradient bookkeeping are const methods.
  double* data() const;
  std::vector<double>& vec() const;

  // Value of a 0-d/1-element tensor.
  double item() const;
  // Slow indexed accessors, for tests and small utilities.
  double at(std::initializer_list<std::int64_t> idx) const;
  void set(std::initializer_list<std::int64_t> idx, double v) const;

  const Tensor& set_requires_grad(bool v = true) const;
  bool requires_grad() const;
  bool grad_defined() const;
  const std::vector<double>& grad() const;
  std::vector<double>& mutable_grad() const;
  void ensure_grad() const;
  void zero_grad() const;

  // Runs reverse-mode accumulation from this scalar tensor.
  void backward() const;

  // Deep copy, detached from the graph.
  Tensor clone() const;
  // Same buffer contents, detached (copies data, drops graph and grad).
  Tensor detach() const;

  TensorImpl* impl() const { return impl_.get(); }
  void set_creator(std::shared_ptr<autograd::Node> node);

 private:
  std::shared_ptr<TensorImpl> impl_;
};

// Integer-valued companion for class-id maps.
struct IntTensor {
  Shape shape;
  std::vector<std::int32_t> data;

  IntTensor() = default;
  explicit IntTensor(Shape s) : shape(std::move(s)), data(shape_numel(shape), 0) {}
  IntTensor(Shape s, std::vector<std::int32_t> values);

  std::int64_t numel() const { return static_cast<std::int64_t>(data.size()); }
  std::int64_t dim(int i) const { return shape.at(static_cast<std::size_t>(i)); }
};

namespace detail {

// Builds the op node linking `out` to `inputs` when grad mode is on and any
// input requires grad. `backward` must accumulate into input grads.
void attach_node(Tensor& out, std::string op, std::vector<Tensor> inputs,
                 std::function<void(const TensorImpl&)> backward);

bool any_requires_grad(const std::vector<Tensor>& inputs);

}  // namespace detail

}  // namespace ganet
