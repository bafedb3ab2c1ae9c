#include "daunet/simam.hpp"

#include <algorithm>
#include <memory>

#include "daunet/error.hpp"
#include "daunet/ops.hpp"

namespace daunet {

void SimamConfig::validate() const {
  if (!(lambda > 0.0)) throw ConfigError("simam lambda must be positive");
  if (!(epsilon > 0.0)) throw ConfigError("simam epsilon must be positive");
}

Tensor simam_energy(const Tensor& x, const SimamConfig& cfg) {
  cfg.validate();
  if (x.rank() != 4) throw ShapeError("simam: rank-4 input required, got " + shape_str(x.shape()));
  const std::size_t planes = x.dim(0) * x.dim(1);
  const std::size_t m = x.dim(2) * x.dim(3);
  if (m < 2) throw ShapeError("simam: planes need at least 2 positions for a leave-one-out mean");
  const double lambda = cfg.lambda;
  const double mm1 = static_cast<double>(m - 1);
  auto v = x.data();

  // Energies are shift-invariant per plane, so work on values centred on the
  // plane mean. Stored per element: centred value z and leave-one-out
  // deviation d = z - mu.
  auto z = std::make_shared<std::vector<double>>(v.size());
  auto dev = std::make_shared<std::vector<double>>(v.size());
  std::vector<double> energy(v.size());
  for (std::size_t pl = 0; pl < planes; ++pl) {
    const double* src = v.data() + pl * m;
    double s = 0.0;
    for (std::size_t i = 0; i < m; ++i) s += src[i];
    const double centre = s / static_cast<double>(m);
    double s1 = 0.0;
    double s2 = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
      const double zi = src[i] - centre;
      (*z)[pl * m + i] = zi;
      s1 += zi;
      s2 += zi * zi;
    }
    for (std::size_t i = 0; i < m; ++i) {
      const double zi = (*z)[pl * m + i];
      const double rest1 = s1 - zi;
      const double rest2 = s2 - zi * zi;
      const double mu = rest1 / mm1;
      const double d = zi - mu;
      // sum over i != t of (z_i - mu)^2 = rest2 - rest1^2 / (M - 1) >= 0
      const double spread = std::max(0.0, rest2 - rest1 * rest1 / mm1);
      (*dev)[pl * m + i] = d;
      energy[pl * m + i] = d * d + lambda * spread;
    }
  }

  return Tensor::make_result(
      x.shape(), std::move(energy), "simam_energy", {x},
      [z, dev, planes, m, lambda, mm1](std::span<const double> gout, std::span<Tensor> in) {
        auto gx = in[0].grad_accumulator();
        for (std::size_t pl = 0; pl < planes; ++pl) {
          const double* g = gout.data() + pl * m;
          const double* zp = z->data() + pl * m;
          const double* dp = dev->data() + pl * m;
          double sum_gd = 0.0;
          double sum_g = 0.0;
          double sum_gmu = 0.0;
          for (std::size_t t = 0; t < m; ++t) {
            sum_gd += g[t] * dp[t];
            sum_g += g[t];
            sum_gmu += g[t] * (zp[t] - dp[t]);
          }
          // dE_t/dx_t = 2 d_t; for j != t:
          // dE_t/dx_j = -2 d_t / (M - 1) + 2 lambda (x_j - mu_t).
          for (std::size_t j = 0; j < m; ++j) {
            const double mu_j = zp[j] - dp[j];
            const double own = 2.0 * g[j] * dp[j];
            const double via_mean = -2.0 * (sum_gd - g[j] * dp[j]) / mm1;
            const double via_spread =
                2.0 * lambda * (zp[j] * (sum_g - g[j]) - (sum_gmu - g[j] * mu_j));
            gx[pl * m + j] += own + via_mean + via_spread;
          }
        }
      });
}

Tensor simam_weights(const Tensor& x, const SimamConfig& cfg) {
  return sigmoid(reciprocal(add_scalar(simam_energy(x, cfg), cfg.epsilon)));
}

Tensor simam_attend(const Tensor& x, const SimamConfig& cfg) { return mul(x, simam_weights(x, cfg)); }

}  // namespace daunet
