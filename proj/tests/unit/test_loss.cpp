#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "daunet/error.hpp"
#include "daunet/loss.hpp"

using namespace daunet;

namespace {

Tensor target_of(const Shape& s, std::vector<double> v) { return Tensor::from_data(s, std::move(v)); }

}  // namespace

TEST(Bce, HandValues) {
  LossConfig unit;
  unit.bce_pos_weight = 1.0;
  const Shape s{1, 1, 2, 2};
  EXPECT_NEAR(weighted_bce_loss(Tensor::zeros(s), target_of(s, {1, 0, 1, 0}), unit).item(), std::log(2.0), 1e-15);
  LossConfig two;
  two.bce_pos_weight = 2.0;
  EXPECT_NEAR(weighted_bce_loss(Tensor::zeros(s), Tensor::full(s, 1.0), two).item(), 2 * std::log(2.0), 1e-15);
  // Saturated logits stay finite: softplus(500) == 500.
  EXPECT_DOUBLE_EQ(weighted_bce_loss(Tensor::full(s, -500.0), Tensor::full(s, 1.0), unit).item(), 500.0);
  EXPECT_DOUBLE_EQ(weighted_bce_loss(Tensor::full(s, 500.0), Tensor::zeros(s), unit).item(), 500.0);
  EXPECT_NEAR(weighted_bce_loss(Tensor::full(s, 500.0), Tensor::full(s, 1.0), unit).item(), 0.0, 1e-200);
}

TEST(Bce, AutoPosWeight) {
  const Shape s{1, 1, 2, 2};
  EXPECT_DOUBLE_EQ(auto_pos_weight(target_of(s, {1, 0, 0, 0})), 3.0);
  EXPECT_DOUBLE_EQ(auto_pos_weight(target_of(s, {1, 1, 1, 1})), 1.0);
  EXPECT_DOUBLE_EQ(auto_pos_weight(Tensor::zeros(s)), 1.0);
  std::vector<double> sparse(1000, 0.0);
  sparse[3] = 1.0;
  EXPECT_DOUBLE_EQ(auto_pos_weight(target_of({1, 1, 10, 100}, sparse)), 100.0);

  // Unset weight uses the automatic one: 3 ln2 on the positive pixel, ln2 on the rest.
  EXPECT_NEAR(weighted_bce_loss(Tensor::zeros(s), target_of(s, {1, 0, 0, 0}), {}).item(),
              (3 * std::log(2.0) + 3 * std::log(2.0)) / 4, 1e-15);
}

TEST(Dice, HandValues) {
  LossConfig cfg;
  const Shape s{1, 1, 2, 2};
  // p = 0.5 everywhere, empty target: 1 - 1 / (2 + 1).
  EXPECT_NEAR(dice_loss(Tensor::zeros(s), Tensor::zeros(s), cfg).item(), 2.0 / 3.0, 1e-15);
  // Perfect saturated prediction.
  EXPECT_NEAR(dice_loss(Tensor::from_data(s, {800, -800, -800, 800}), target_of(s, {1, 0, 0, 1}), cfg).item(), 0.0,
              1e-15);
  // Fully wrong: 1 - 1 / (2 + 2 + 1).
  EXPECT_NEAR(dice_loss(Tensor::from_data(s, {-800, 800, 800, -800}), target_of(s, {1, 0, 0, 1}), cfg).item(), 0.8,
              1e-15);
}

TEST(Dice, ClassWeightsFormWeightedMean) {
  const Shape s{1, 2, 1, 2};
  const Tensor z = Tensor::from_data(s, {800, 800, -800, -800});
  const Tensor g = target_of(s, {1, 1, 1, 1});
  // Class 0 perfect (loss 0); class 1 empty prediction: 1 - 1 / 3.
  LossConfig cfg;
  EXPECT_NEAR(dice_loss(z, g, cfg).item(), (2.0 / 3.0) / 2, 1e-15);
  cfg.class_weights = {1.0, 3.0};
  EXPECT_NEAR(dice_loss(z, g, cfg).item(), 3 * (2.0 / 3.0) / 4, 1e-15);
  cfg.class_weights = {1.0};
  EXPECT_THROW(dice_loss(z, g, cfg), ShapeError);
}

TEST(Hybrid, IsWeightedSumAndBounded) {
  std::mt19937_64 rng(41);
  std::normal_distribution<double> nz(0.0, 4.0);
  std::bernoulli_distribution coin(0.3);
  for (int t = 0; t < 20; ++t) {
    const Shape s{2, 2, 4, 4};
    std::vector<double> z(numel(s)), g(numel(s));
    for (std::size_t i = 0; i < z.size(); ++i) {
      z[i] = nz(rng);
      g[i] = coin(rng) ? 1.0 : 0.0;
    }
    const Tensor lz = Tensor::from_data(s, z), tg = Tensor::from_data(s, g);
    LossConfig cfg;
    cfg.dice_weight = 0.7;
    cfg.bce_weight = 1.3;
    const double d = dice_loss(lz, tg, cfg).item(), b = weighted_bce_loss(lz, tg, cfg).item();
    EXPECT_GE(d, 0.0);
    EXPECT_LE(d, 1.0);
    EXPECT_GE(b, 0.0);
    EXPECT_NEAR(hybrid_loss(lz, tg, cfg).item(), 0.7 * d + 1.3 * b, 1e-13);
  }
}

TEST(Loss, InputValidation) {
  const Shape s{1, 1, 2, 2};
  EXPECT_THROW(dice_loss(Tensor::zeros(s), Tensor::zeros({1, 1, 2, 3}), {}), ShapeError);
  EXPECT_THROW(weighted_bce_loss(Tensor::zeros(s), Tensor::full(s, 0.5), {}), Error);
  LossConfig bad;
  bad.bce_pos_weight = 0.5;
  EXPECT_THROW(bad.validate(), ConfigError);
  bad = {};
  bad.dice_smooth = 0.0;
  EXPECT_THROW(bad.validate(), ConfigError);
  bad = {};
  bad.class_weights = {1.0, -1.0};
  EXPECT_THROW(bad.validate(), ConfigError);
}

TEST(Loss, GradientIsFinite) {
  const Shape s{1, 1, 2, 2};
  Tensor z = Tensor::from_data(s, {-900, 900, 0, 3}, true);
  backward(hybrid_loss(z, target_of(s, {1, 0, 1, 0}), {}));
  for (double v : z.grad()) EXPECT_TRUE(std::isfinite(v));
}
