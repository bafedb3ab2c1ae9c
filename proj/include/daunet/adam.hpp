#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "daunet/model.hpp"

namespace daunet {

struct AdamState {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::uint64_t t = 0;
  std::vector<Tensor> m;  // aligned with the parameter list
  std::vector<Tensor> v;

  static AdamState for_params(std::span<const NamedTensor> params);
};

// One bias-corrected Adam update of every parameter from its accumulated
// gradient; a parameter without a gradient buffer is treated as g = 0.
void adam_step(std::span<const NamedTensor> params, AdamState& state, double lr);

}  // namespace daunet
