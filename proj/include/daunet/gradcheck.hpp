#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "daunet/tensor.hpp"

namespace daunet {

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::size_t worst_index = 0;
  std::size_t coords_checked = 0;
  bool passed = false;
};

using ScalarFn = std::function<Tensor(const Tensor&)>;

// Compares the autodiff gradient of f at point with central differences.
// Relative error per coordinate is |a - n| / max(1, |a|, |n|). max_coords
// limits the number of probed coordinates (evenly spaced; 0 = all).
GradCheckReport finite_diff_check(const ScalarFn& f, const Tensor& point, double tolerance,
                                  double step = 1e-5, std::size_t max_coords = 0);

struct GradCheckCase {
  std::string name;
  std::uint64_t seed = 0;
  GradCheckReport report;
};

// Finite-difference checks for every differentiable operator the networks
// use, each on the given seeds. Inputs into ReLU, max-pool and the bilinear
// sampler are jittered away from their kinks.
std::vector<GradCheckCase> run_gradcheck_suite(const std::vector<std::uint64_t>& seeds,
                                               double tolerance = 1e-6);

}  // namespace daunet
