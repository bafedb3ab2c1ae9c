#include "daunet/tensor.hpp"

#include <cmath>
#include <sstream>
#include <unordered_set>

#include "daunet/error.hpp"
#include "daunet/kernels.hpp"

namespace daunet {
namespace {

thread_local bool g_grad_enabled = true;

void validate_shape(const Shape& shape) {
  if (shape.empty() || shape.size() > 4) {
    throw ShapeError("tensor rank must be 1-4, got " + std::to_string(shape.size()));
  }
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (shape[i] == 0) {
      throw ShapeError("tensor dimension " + std::to_string(i) + " is zero in " +
                       shape_str(shape));
    }
  }
}

}  // namespace

std::size_t numel(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ", ";
    os << shape[i];
  }
  os << ')';
  return os.str();
}

Tensor Tensor::zeros(const Shape& shape, bool requires_grad) {
  return full(shape, 0.0, requires_grad);
}

Tensor Tensor::full(const Shape& shape, double value, bool requires_grad) {
  validate_shape(shape);
  return from_data(shape, std::vector<double>(daunet::numel(shape), value), requires_grad);
}

Tensor Tensor::from_data(const Shape& shape, std::vector<double> values, bool requires_grad) {
  validate_shape(shape);
  if (values.size() != daunet::numel(shape)) {
    throw ShapeError("data length " + std::to_string(values.size()) + " does not match shape " +
                     shape_str(shape));
  }
  auto impl = std::make_shared<detail::TensorImpl>();
  impl->shape = shape;
  impl->data = std::move(values);
  impl->requires_grad = requires_grad;
  return Tensor(std::move(impl));
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return from_data({1}, {value}, requires_grad);
}

const detail::TensorImpl& Tensor::checked() const {
  if (!impl_) throw Error("use of undefined tensor");
  return *impl_;
}

detail::TensorImpl& Tensor::checked() {
  if (!impl_) throw Error("use of undefined tensor");
  return *impl_;
}

const Shape& Tensor::shape() const { return checked().shape; }

std::size_t Tensor::dim(std::size_t i) const {
  const Shape& s = shape();
  if (i >= s.size()) {
    throw ShapeError("dimension index " + std::to_string(i) + " out of range for " +
                     shape_str(s));
  }
  return s[i];
}

std::span<const double> Tensor::data() const { return checked().data; }
std::span<double> Tensor::mutable_data() { return checked().data; }

double Tensor::item() const {
  if (numel() != 1) throw ShapeError("item() on tensor of shape " + shape_str(shape()));
  return data()[0];
}

double Tensor::at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const {
  const Shape& s = shape();
  if (s.size() != 4) throw ShapeError("at(n,c,h,w) needs a rank-4 tensor");
  return data()[((n * s[1] + c) * s[2] + h) * s[3] + w];
}

bool Tensor::requires_grad() const { return checked().requires_grad; }
void Tensor::set_requires_grad(bool flag) { checked().requires_grad = flag; }
bool Tensor::is_leaf() const { return !checked().backward; }
const char* Tensor::op_tag() const { return checked().op; }

bool Tensor::has_grad() const { return !checked().grad.empty(); }
std::span<const double> Tensor::grad() const { return checked().grad; }

std::span<double> Tensor::grad_accumulator() {
  auto& impl = checked();
  if (impl.grad.empty()) impl.grad.assign(impl.data.size(), 0.0);
  return impl.grad;
}

void Tensor::zero_grad() {
  auto& impl = checked();
  std::fill(impl.grad.begin(), impl.grad.end(), 0.0);
}

Tensor Tensor::clone() const {
  const auto& impl = checked();
  return from_data(impl.shape, impl.data, impl.requires_grad);
}

Tensor Tensor::detach() const {
  const auto& impl = checked();
  return from_data(impl.shape, impl.data, false);
}

Tensor Tensor::make_result(Shape shape, std::vector<double> values, const char* op,
                           std::vector<Tensor> inputs, BackwardFn backward) {
  Tensor out = from_data(shape, std::move(values), false);
  out.impl_->op = op;
  if (!g_grad_enabled) return out;
  bool any = false;
  for (const Tensor& t : inputs) any = any || (t.defined() && t.requires_grad());
  if (!any) return out;
  out.impl_->requires_grad = true;
  out.impl_->inputs = std::move(inputs);
  out.impl_->backward = std::move(backward);
  return out;
}

void backward(const Tensor& root) {
  if (!root.defined()) throw Error("backward() on undefined tensor");
  if (root.numel() != 1) {
    throw ShapeError("backward() needs a scalar root, got shape " + shape_str(root.shape()));
  }
  if (!root.requires_grad()) return;

  // Iterative post-order DFS; reversing it yields a topological order in
  // which every node precedes all of its inputs.
  std::vector<detail::TensorImpl*> order;
  std::unordered_set<detail::TensorImpl*> visited;
  std::vector<std::pair<detail::TensorImpl*, std::size_t>> stack;
  stack.emplace_back(root.impl(), 0);
  visited.insert(root.impl());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      detail::TensorImpl* child = node->inputs[next++].impl();
      if (child && child->requires_grad && visited.insert(child).second) {
        stack.emplace_back(child, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  Tensor r = root;
  r.grad_accumulator()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    detail::TensorImpl* node = *it;
    if (!node->backward || node->grad.empty()) continue;
    node->backward(node->grad, node->inputs);
    std::vector<double>().swap(node->grad);
  }
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

void check_finite(const Tensor& t, const std::string& what) {
  auto d = t.data();
  for (std::size_t i = 0; i < d.size(); ++i) {
    if (!std::isfinite(d[i])) {
      throw Error(what + ": non-finite value " + std::to_string(d[i]) + " at flat index " +
                  std::to_string(i));
    }
  }
}

}  // namespace daunet
