#include "ganet/tensor.hpp"

#include <algorithm>
#include <sstream>
#include <unordered_set>

namespace ganet {

std::int64_t shape_numel(const Shape& shape) {
  std::int64_t n = 1;
  for (auto d : shape) {
    GANET_CHECK(d >= 0, ShapeError, "negative dimension in shape ", shape_str(shape));
    n *= d;
  }
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ", ";
    os << shape[i];
  }
  os << "]";
  return os.str();
}

bool same_shape(const Shape& a, const Shape& b) { return a == b; }

namespace autograd {

namespace {
thread_local bool g_grad_enabled = true;
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : prev_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = prev_; }

}  // namespace autograd

Tensor::Tensor(Shape shape) : impl_(std::make_shared<TensorImpl>()) {
  impl_->shape = std::move(shape);
  impl_->data.assign(static_cast<std::size_t>(shape_numel(impl_->shape)), 0.0);
}

Tensor::Tensor(Shape shape, std::vector<double> values)
    : impl_(std::make_shared<TensorImpl>()) {
  impl_->shape = std::move(shape);
  GANET_CHECK(static_cast<std::int64_t>(values.size()) == shape_numel(impl_->shape),
              ShapeError, "tensor data size ", values.size(), " does not match shape ",
              shape_str(impl_->shape));
  impl_->data = std::move(values);
}

Tensor Tensor::zeros(Shape shape) { return Tensor(std::move(shape)); }

Tensor Tensor::full(Shape shape, double value) {
  Tensor t(std::move(shape));
  std::fill(t.impl_->data.begin(), t.impl_->data.end(), value);
  return t;
}

Tensor Tensor::scalar(double value) { return Tensor({1}, {value}); }

const Shape& Tensor::shape() const {
  GANET_CHECK(defined(), ShapeError, "use of undefined tensor");
  return impl_->shape;
}

std::int64_t Tensor::dim(int i) const { return shape().at(static_cast<std::size_t>(i)); }

std::int64_t Tensor::numel() const {
  return static_cast<std::int64_t>(impl_ ? impl_->data.size() : 0);
}

double* Tensor::data() const { return impl_->data.data(); }
std::vector<double>& Tensor::vec() const { return impl_->data; }

double Tensor::item() const {
  GANET_CHECK(numel() == 1, ShapeError, "item() on tensor of ", numel(), " elements");
  return impl_->data[0];
}

namespace {
std::size_t flat_index(const Shape& shape, std::initializer_list<std::int64_t> idx) {
  GANET_CHECK(idx.size() == shape.size(), ShapeError, "index rank ", idx.size(),
              " vs tensor rank ", shape.size());
  std::size_t flat = 0;
  std::size_t axis = 0;
  for (auto i : idx) {
    GANET_CHECK(i >= 0 && i < shape[axis], ShapeError, "index ", i, " out of bounds for axis ",
                axis, " with extent ", shape[axis]);
    flat = flat * static_cast<std::size_t>(shape[axis]) + static_cast<std::size_t>(i);
    ++axis;
  }
  return flat;
}
}  // namespace

double Tensor::at(std::initializer_list<std::int64_t> idx) const {
  return impl_->data[flat_index(impl_->shape, idx)];
}

void Tensor::set(std::initializer_list<std::int64_t> idx, double v) const {
  impl_->data[flat_index(impl_->shape, idx)] = v;
}

const Tensor& Tensor::set_requires_grad(bool v) const {
  impl_->requires_grad = v;
  return *this;
}

bool Tensor::requires_grad() const { return impl_ && impl_->requires_grad; }

bool Tensor::grad_defined() const { return impl_ && !impl_->grad.empty(); }

const std::vector<double>& Tensor::grad() const {
  GANET_CHECK(grad_defined(), Error, "tensor has no gradient");
  return impl_->grad;
}

std::vector<double>& Tensor::mutable_grad() const {
  ensure_grad();
  return impl_->grad;
}

void Tensor::ensure_grad() const {
  if (impl_->grad.empty()) impl_->grad.assign(impl_->data.size(), 0.0);
}

void Tensor::zero_grad() const {
  if (!impl_->grad.empty()) std::fill(impl_->grad.begin(), impl_->grad.end(), 0.0);
}

Tensor Tensor::clone() const {
  Tensor t(impl_->shape, impl_->data);
  return t;
}

Tensor Tensor::detach() const {
  Tensor t(impl_->shape, impl_->data);
  return t;
}

void Tensor::set_creator(std::shared_ptr<autograd::Node> node) {
  impl_->creator = std::move(node);
  impl_->requires_grad = true;
}

void Tensor::backward() const {
  GANET_CHECK(defined() && numel() == 1, ShapeError,
              "backward() requires a scalar tensor, got ", shape_str(shape()));
  // Postorder DFS over creator nodes; reverse order is a valid topological
  // order for gradient propagation.
  std::vector<TensorImpl*> order;
  std::unordered_set<TensorImpl*> visited;
  std::vector<std::pair<TensorImpl*, std::size_t>> stack;
  stack.emplace_back(impl_.get(), 0);
  visited.insert(impl_.get());
  while (!stack.empty()) {
    auto& [node, next_child] = stack.back();
    if (!node->creator || next_child >= node->creator->inputs.size()) {
      order.push_back(node);
      stack.pop_back();
      continue;
    }
    TensorImpl* child = node->creator->inputs[next_child].impl();
    ++next_child;
    if (child && child->creator && !visited.count(child)) {
      visited.insert(child);
      stack.emplace_back(child, 0);
    }
  }

  ensure_grad();
  impl_->grad[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    TensorImpl* t = *it;
    if (!t->creator) continue;
    t->creator->backward(*t);
  }
}

IntTensor::IntTensor(Shape s, std::vector<std::int32_t> values)
    : shape(std::move(s)), data(std::move(values)) {
  GANET_CHECK(static_cast<std::int64_t>(data.size()) == shape_numel(shape), ShapeError,
              "int tensor data size ", data.size(), " does not match shape ", shape_str(shape));
}

namespace detail {

bool any_requires_grad(const std::vector<Tensor>& inputs) {
  for (const auto& t : inputs)
    if (t.requires_grad()) return true;
  return false;
}

void attach_node(Tensor& out, std::string op, std::vector<Tensor> inputs,
                 std::function<void(const TensorImpl&)> backward) {
  if (!autograd::grad_enabled() || !any_requires_grad(inputs)) return;
  auto node = std::make_shared<autograd::Node>();
  node->op = std::move(op);
  node->inputs = std::move(inputs);
  node->backward = std::move(backward);
  out.set_creator(std::move(node));
}

}  // namespace detail

}  // namespace ganet
