#include "daunet/adam.hpp"

#include <cmath>

#include "daunet/error.hpp"

namespace daunet {

AdamState AdamState::for_params(std::span<const NamedTensor> params) {
  AdamState s;
  for (const auto& p : params) {
    s.m.push_back(Tensor::zeros(p.tensor.shape()));
    s.v.push_back(Tensor::zeros(p.tensor.shape()));
  }
  return s;
}

void adam_step(std::span<const NamedTensor> params, AdamState& state, double lr) {
  if (state.m.size() != params.size() || state.v.size() != params.size()) {
    throw ShapeError("adam_step: state holds " + std::to_string(state.m.size()) +
                     " moments for " + std::to_string(params.size()) + " parameters");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    const Shape& s = params[i].tensor.shape();
    if (state.m[i].shape() != s || state.v[i].shape() != s) {
      throw ShapeError("adam_step: moment shape mismatch for " + params[i].name);
    }
  }
  ++state.t;
  const double c1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.t));
  const double c2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.t));
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor p = params[i].tensor;
    auto theta = p.mutable_data();
    auto m = state.m[i].mutable_data();
    auto v = state.v[i].mutable_data();
    const bool has = p.has_grad();
    std::span<const double> g = has ? p.grad() : std::span<const double>();
    for (std::size_t k = 0; k < theta.size(); ++k) {
      const double gk = has ? g[k] : 0.0;
      m[k] = state.beta1 * m[k] + (1.0 - state.beta1) * gk;
      v[k] = state.beta2 * v[k] + (1.0 - state.beta2) * gk * gk;
      const double mhat = m[k] / c1;
      const double vhat = v[k] / c2;
      theta[k] -= lr * mhat / (std::sqrt(vhat) + state.eps);
    }
  }
}

}  // namespace daunet
