#include "daunet/loss.hpp"

#include <algorithm>
#include <cmath>
#include <memory>

#include "daunet/error.hpp"
#include "daunet/ops.hpp"

namespace daunet {
namespace {

double sigmoid_scalar(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

double softplus(double z) { return std::max(z, 0.0) + std::log1p(std::exp(-std::abs(z))); }

void check_pair(const Tensor& logits, const Tensor& target, const char* op) {
  if (logits.shape() != target.shape()) {
    throw ShapeError(std::string(op) + ": logits " + shape_str(logits.shape()) + " vs target " +
                     shape_str(target.shape()));
  }
  if (logits.rank() != 4) throw ShapeError(std::string(op) + ": rank-4 (N, C, H, W) required");
  for (double g : target.data()) {
    if (g != 0.0 && g != 1.0) throw Error(std::string(op) + ": target values must be 0 or 1");
  }
}

}  // namespace

void LossConfig::validate() const {
  if (bce_pos_weight && !(*bce_pos_weight >= 1.0)) throw ConfigError("loss.bce_pos_weight must be >= 1");
  if (!(dice_smooth > 0.0)) throw ConfigError("loss.dice_smooth must be > 0");
  for (double w : class_weights) {
    if (!(w > 0.0)) throw ConfigError("loss.class_weights must all be positive");
  }
  if (dice_weight < 0.0 || bce_weight < 0.0) throw ConfigError("loss term weights must be >= 0");
}

double auto_pos_weight(const Tensor& target) {
  double pos = 0.0;
  for (double g : target.data()) pos += g;
  const double neg = static_cast<double>(target.numel()) - pos;
  if (pos <= 0.0) return 1.0;
  return std::clamp(neg / pos, 1.0, 100.0);
}

Tensor dice_loss(const Tensor& logits, const Tensor& target, const LossConfig& cfg) {
  check_pair(logits, target, "dice_loss");
  cfg.validate();
  const std::size_t n = logits.dim(0), c = logits.dim(1), hw = logits.dim(2) * logits.dim(3);
  std::vector<double> cw = cfg.class_weights.empty() ? std::vector<double>(c, 1.0) : cfg.class_weights;
  if (cw.size() != c) {
    throw ShapeError("dice_loss: " + std::to_string(cw.size()) + " class weights for " +
                     std::to_string(c) + " classes");
  }
  double wsum = 0.0;
  for (double w : cw) wsum += w;
  const double s = cfg.dice_smooth;

  auto z = logits.data();
  auto g = target.data();
  auto prob = std::make_shared<std::vector<double>>(z.size());
  // Per (sample, class): intersection and denominator.
  auto inter = std::make_shared<std::vector<double>>(n * c);
  auto denom = std::make_shared<std::vector<double>>(n * c);
  double loss = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t ci = 0; ci < c; ++ci) {
      const std::size_t off = (i * c + ci) * hw;
      double pi = 0.0, sp = 0.0, sg = 0.0;
      for (std::size_t k = 0; k < hw; ++k) {
        const double p = sigmoid_scalar(z[off + k]);
        (*prob)[off + k] = p;
        pi += p * g[off + k];
        sp += p;
        sg += g[off + k];
      }
      (*inter)[i * c + ci] = pi;
      (*denom)[i * c + ci] = sp + sg + s;
      loss += cw[ci] * (1.0 - (2.0 * pi + s) / (sp + sg + s));
    }
  }
  const double norm = 1.0 / (static_cast<double>(n) * wsum);
  loss *= norm;

  return Tensor::make_result(
      {1}, {loss}, "dice_loss", {logits},
      [prob, inter, denom, cw, n, c, hw, s, norm, target](std::span<const double> gout,
                                                          std::span<Tensor> in) {
        auto gz = in[0].grad_accumulator();
        auto g = target.data();
        for (std::size_t i = 0; i < n; ++i) {
          for (std::size_t ci = 0; ci < c; ++ci) {
            const std::size_t off = (i * c + ci) * hw;
            const double d = (*denom)[i * c + ci];
            const double num = 2.0 * (*inter)[i * c + ci] + s;
            const double scale = gout[0] * norm * cw[ci];
            for (std::size_t k = 0; k < hw; ++k) {
              const double p = (*prob)[off + k];
              const double dl_dp = -(2.0 * g[off + k] * d - num) / (d * d);
              gz[off + k] += scale * dl_dp * p * (1.0 - p);
            }
          }
        }
      });
}

Tensor weighted_bce_loss(const Tensor& logits, const Tensor& target, const LossConfig& cfg) {
  check_pair(logits, target, "weighted_bce_loss");
  cfg.validate();
  const double w = cfg.bce_pos_weight ? *cfg.bce_pos_weight : auto_pos_weight(target);
  auto z = logits.data();
  auto g = target.data();
  double total = 0.0;
  for (std::size_t i = 0; i < z.size(); ++i) {
    total += w * g[i] * softplus(-z[i]) + (1.0 - g[i]) * softplus(z[i]);
  }
  const double inv_n = 1.0 / static_cast<double>(z.size());
  return Tensor::make_result({1}, {total * inv_n}, "weighted_bce_loss", {logits},
                             [w, inv_n, target](std::span<const double> gout, std::span<Tensor> in) {
                               auto z = in[0].data();
                               auto g = target.data();
                               auto gz = in[0].grad_accumulator();
                               const double scale = gout[0] * inv_n;
                               for (std::size_t i = 0; i < z.size(); ++i) {
                                 const double p = sigmoid_scalar(z[i]);
                                 gz[i] += scale * (w * g[i] * (p - 1.0) + (1.0 - g[i]) * p);
                               }
                             });
}

Tensor hybrid_loss(const Tensor& logits, const Tensor& target, const LossConfig& cfg) {
  return add(scale(dice_loss(logits, target, cfg), cfg.dice_weight),
             scale(weighted_bce_loss(logits, target, cfg), cfg.bce_weight));
}

}  // namespace daunet
