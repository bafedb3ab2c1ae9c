#pragma once

#include "daunet/tensor.hpp"

// Parameter-free attention. Each activation x_t of an (n, c) plane gets the
// energy
//   E_t = (x_t - mu_t)^2 + lambda * sum_{i != t} (x_i - mu_t)^2
// with mu_t the plane mean excluding x_t, and is rescaled by
// sigmoid(1 / (E_t + epsilon)).
namespace daunet {

struct SimamConfig {
  double lambda = 1e-4;
  double epsilon = 1e-8;

  void validate() const;
  bool operator==(const SimamConfig&) const = default;
};

// Energy map with the input's shape, computed from two plane reductions.
// Differentiable. Requires H * W >= 2.
Tensor simam_energy(const Tensor& x, const SimamConfig& cfg = {});

// sigmoid(1 / (E + epsilon)); every entry lies in (0.5, 1].
Tensor simam_weights(const Tensor& x, const SimamConfig& cfg = {});

// x * simam_weights(x).
Tensor simam_attend(const Tensor& x, const SimamConfig& cfg = {});

}  // namespace daunet
