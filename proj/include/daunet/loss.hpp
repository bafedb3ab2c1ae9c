#pragma once

#include <optional>
#include <vector>

#include "daunet/tensor.hpp"

namespace daunet {

struct LossConfig {
  // Weight on foreground pixels in the BCE term. Unset: per batch,
  // (#negative / #positive) over the whole target, clamped to [1, 100].
  std::optional<double> bce_pos_weight;
  double dice_smooth = 1.0;
  // Per-class weights of the Dice term; empty means all ones.
  std::vector<double> class_weights;
  double dice_weight = 1.0;
  double bce_weight = 1.0;

  void validate() const;
};

// Foreground weight used when LossConfig::bce_pos_weight is unset.
double auto_pos_weight(const Tensor& target);

// Soft Dice on sigmoid(logits), 1 - (2 sum(p g) + s) / (sum p + sum g + s)
// per (sample, class), averaged over samples and class-weighted over classes.
Tensor dice_loss(const Tensor& logits, const Tensor& target, const LossConfig& cfg);

// Mean over elements of w g softplus(-z) + (1 - g) softplus(z), the stable
// logit form of -[w g log sigmoid(z) + (1 - g) log(1 - sigmoid(z))].
Tensor weighted_bce_loss(const Tensor& logits, const Tensor& target, const LossConfig& cfg);

// dice_weight * dice + bce_weight * bce.
Tensor hybrid_loss(const Tensor& logits, const Tensor& target, const LossConfig& cfg);

}  // namespace daunet
