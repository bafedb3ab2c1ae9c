#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace daunet {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

class Tensor;

// Accumulates the gradient of one recorded op into its inputs. grad_out has
// the shape of the op's result; inputs are the tensors the op was called on.
using BackwardFn = std::function<void(std::span<const double> grad_out, std::span<Tensor> inputs)>;

namespace detail {

struct TensorImpl {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;
  bool requires_grad = false;
  const char* op = "leaf";
  std::vector<Tensor> inputs;
  BackwardFn backward;
};

}  // namespace detail

// Dense rank 1-4 array of doubles with an optional gradient buffer. Copies
// are shallow handles onto the same storage; use clone() for a deep copy.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(const Shape& shape, bool requires_grad = false);
  static Tensor full(const Shape& shape, double value, bool requires_grad = false);
  static Tensor from_data(const Shape& shape, std::vector<double> values,
                          bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t dim(std::size_t i) const;
  std::size_t numel() const { return data().size(); }

  std::span<const double> data() const;
  // Writable view of the values. Intended for leaves (parameters, buffers)
  // and freshly built tensors; mutating a tensor that a recorded graph still
  // references invalidates that graph's backward pass.
  std::span<double> mutable_data();
  double item() const;
  double at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const;

  bool requires_grad() const;
  void set_requires_grad(bool flag);
  bool is_leaf() const;
  const char* op_tag() const;

  bool has_grad() const;
  std::span<const double> grad() const;
  // Gradient buffer, allocated as zeros on first access.
  std::span<double> grad_accumulator();
  void zero_grad();

  Tensor clone() const;
  // Same values, no graph history, no gradient.
  Tensor detach() const;

  bool same_storage(const Tensor& other) const { return impl_ == other.impl_; }
  detail::TensorImpl* impl() const { return impl_.get(); }

  // Builds an op result. The graph edge is recorded only when grad mode is
  // on and at least one input requires a gradient.
  static Tensor make_result(Shape shape, std::vector<double> values, const char* op,
                            std::vector<Tensor> inputs, BackwardFn backward);

 private:
  explicit Tensor(std::shared_ptr<detail::TensorImpl> impl) : impl_(std::move(impl)) {}
  const detail::TensorImpl& checked() const;
  detail::TensorImpl& checked();

  std::shared_ptr<detail::TensorImpl> impl_;
};

// Reverse-mode sweep from a scalar root. Every tensor with requires_grad on
// the recorded graph gets its gradient accumulated; gradients add across
// fan-out. Interior gradient buffers are released once consumed, leaves keep
// theirs.
void backward(const Tensor& root);

// Whether ops record graph edges on this thread.
bool grad_enabled();

class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

// Throws Error naming the first NaN/Inf element.
void check_finite(const Tensor& t, const std::string& what);

}  // namespace daunet
