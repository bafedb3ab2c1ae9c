#include "daunet/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "daunet/error.hpp"

namespace daunet {

GradCheckReport finite_diff_check(const ScalarFn& f, const Tensor& point, double tolerance,
                                  double step, std::size_t max_coords) {
  Tensor x = point.detach();
  x.set_requires_grad(true);
  Tensor y = f(x);
  if (y.numel() != 1) throw ShapeError("finite_diff_check: f must return a scalar");
  backward(y);
  std::vector<double> analytic(x.numel(), 0.0);
  if (x.has_grad()) std::copy(x.grad().begin(), x.grad().end(), analytic.begin());

  const std::size_t total = x.numel();
  const std::size_t count = (max_coords == 0 || max_coords >= total) ? total : max_coords;
  GradCheckReport report;
  NoGradGuard no_grad;
  Tensor probe = point.detach();
  auto values = probe.mutable_data();
  for (std::size_t j = 0; j < count; ++j) {
    const std::size_t i = count == total ? j : (j * total) / count;
    const double orig = values[i];
    values[i] = orig + step;
    const double fp = f(probe).item();
    values[i] = orig - step;
    const double fm = f(probe).item();
    values[i] = orig;
    const double numeric = (fp - fm) / (2.0 * step);
    const double a = analytic[i];
    double rel = std::abs(a - numeric) / std::max({1.0, std::abs(a), std::abs(numeric)});
    if (!std::isfinite(rel)) rel = std::numeric_limits<double>::infinity();
    if (rel > report.max_rel_error) {
      report.max_rel_error = rel;
      report.worst_index = i;
    }
  }
  report.coords_checked = count;
  report.passed = std::isfinite(report.max_rel_error) && report.max_rel_error <= tolerance;
  return report;
}

}  // namespace daunet
