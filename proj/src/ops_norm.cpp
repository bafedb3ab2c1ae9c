#include <cmath>
#include <memory>

#include "daunet/error.hpp"
#include "daunet/ops.hpp"

namespace daunet {

BatchNormState BatchNormState::for_channels(std::size_t channels) {
  BatchNormState s;
  s.running_mean = Tensor::zeros({channels});
  s.running_var = Tensor::full({channels}, 1.0);
  return s;
}

Tensor batchnorm2d(const Tensor& input, const Tensor& gamma, const Tensor& beta,
                   BatchNormState& state, bool training) {
  if (input.rank() != 4) throw ShapeError("batchnorm2d: rank-4 input required");
  const std::size_t n = input.dim(0), c = input.dim(1), hw = input.dim(2) * input.dim(3);
  const Tensor* per_channel[] = {&gamma, &beta, &state.running_mean, &state.running_var};
  for (const Tensor* t : per_channel) {
    if (!t->defined() || t->rank() != 1 || t->dim(0) != c) {
      throw ShapeError("batchnorm2d: per-channel parameter shape " +
                       (t->defined() ? shape_str(t->shape()) : std::string("undefined")) +
                       " does not match C=" + std::to_string(c));
    }
  }
  const double m = static_cast<double>(n * hw);
  auto x = input.data();
  auto g = gamma.data();
  auto b = beta.data();

  auto xhat = std::make_shared<std::vector<double>>(x.size());
  auto inv_std = std::make_shared<std::vector<double>>(c);
  std::vector<double> out(x.size());

  auto rm = state.running_mean.mutable_data();
  auto rv = state.running_var.mutable_data();
  for (std::size_t ci = 0; ci < c; ++ci) {
    double mu;
    double var;
    if (training) {
      double s = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        const double* p = x.data() + (i * c + ci) * hw;
        for (std::size_t k = 0; k < hw; ++k) s += p[k];
      }
      mu = s / m;
      double ss = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        const double* p = x.data() + (i * c + ci) * hw;
        for (std::size_t k = 0; k < hw; ++k) ss += (p[k] - mu) * (p[k] - mu);
      }
      var = ss / m;
      const double unbiased = m > 1.0 ? ss / (m - 1.0) : var;
      rm[ci] = (1.0 - state.momentum) * rm[ci] + state.momentum * mu;
      rv[ci] = (1.0 - state.momentum) * rv[ci] + state.momentum * unbiased;
    } else {
      mu = rm[ci];
      var = rv[ci];
    }
    const double inv = 1.0 / std::sqrt(var + state.eps);
    (*inv_std)[ci] = inv;
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t off = (i * c + ci) * hw;
      for (std::size_t k = 0; k < hw; ++k) {
        const double h = (x[off + k] - mu) * inv;
        (*xhat)[off + k] = h;
        out[off + k] = g[ci] * h + b[ci];
      }
    }
  }

  return Tensor::make_result(
      input.shape(), std::move(out), training ? "batchnorm2d_train" : "batchnorm2d_eval",
      {input, gamma, beta},
      [xhat, inv_std, n, c, hw, m, training](std::span<const double> gout, std::span<Tensor> in) {
        auto gam = in[1].data();
        std::span<double> gx = in[0].requires_grad() ? in[0].grad_accumulator() : std::span<double>();
        std::span<double> gg = in[1].requires_grad() ? in[1].grad_accumulator() : std::span<double>();
        std::span<double> gb = in[2].requires_grad() ? in[2].grad_accumulator() : std::span<double>();
        for (std::size_t ci = 0; ci < c; ++ci) {
          double sum_g = 0.0;
          double sum_gx = 0.0;
          for (std::size_t i = 0; i < n; ++i) {
            const std::size_t off = (i * c + ci) * hw;
            for (std::size_t k = 0; k < hw; ++k) {
              sum_g += gout[off + k];
              sum_gx += gout[off + k] * (*xhat)[off + k];
            }
          }
          if (!gg.empty()) gg[ci] += sum_gx;
          if (!gb.empty()) gb[ci] += sum_g;
          if (gx.empty()) continue;
          const double scale = gam[ci] * (*inv_std)[ci];
          const double mean_g = training ? sum_g / m : 0.0;
          const double mean_gx = training ? sum_gx / m : 0.0;
          for (std::size_t i = 0; i < n; ++i) {
            const std::size_t off = (i * c + ci) * hw;
            for (std::size_t k = 0; k < hw; ++k) {
              gx[off + k] += scale * (gout[off + k] - mean_g - (*xhat)[off + k] * mean_gx);
            }
          }
        }
      });
}

}  // namespace daunet
