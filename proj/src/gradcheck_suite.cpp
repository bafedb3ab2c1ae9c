#include <cmath>
#include <string>

#include "daunet/deform_conv.hpp"
#include "daunet/gradcheck.hpp"
#include "daunet/loss.hpp"
#include "daunet/ops.hpp"
#include "daunet/rng.hpp"
#include "daunet/simam.hpp"

namespace daunet {
namespace {

Tensor random(Rng& rng, const Shape& shape, double lo = -1.0, double hi = 1.0) {
  std::vector<double> v(numel(shape));
  for (double& x : v) x = rng.uniform(lo, hi);
  return Tensor::from_data(shape, std::move(v));
}

// Values bounded away from zero by `gap`, for ReLU.
Tensor away_from_zero(Rng& rng, const Shape& shape, double gap) {
  Tensor t = random(rng, shape);
  for (double& x : t.mutable_data()) x = x < 0 ? x - gap : x + gap;
  return t;
}

// Distinct values with spacing >= 0.05, for max-pool.
Tensor distinct(Rng& rng, const Shape& shape) {
  const std::size_t n = numel(shape);
  std::vector<double> v(n);
  for (std::size_t i = 0; i < n; ++i) v[i] = 0.05 * static_cast<double>(i) + rng.uniform(0.0, 0.01);
  for (std::size_t i = n; i > 1; --i) {
    std::swap(v[i - 1], v[static_cast<std::size_t>(rng.uniform(0.0, 1.0) * static_cast<double>(i)) % i]);
  }
  return Tensor::from_data(shape, std::move(v));
}

// Offsets whose fractional parts stay in [0.15, 0.85], away from the
// sampler's kinks at integer coordinates.
Tensor fractional_offsets(Rng& rng, const Shape& shape) {
  std::vector<double> v(numel(shape));
  for (double& x : v) x = std::floor(rng.uniform(-2.0, 2.0)) + rng.uniform(0.15, 0.85);
  return Tensor::from_data(shape, std::move(v));
}

Tensor binary(Rng& rng, const Shape& shape) {
  std::vector<double> v(numel(shape));
  for (double& x : v) x = rng.bernoulli(0.4) ? 1.0 : 0.0;
  v[0] = 1.0;
  return Tensor::from_data(shape, std::move(v));
}

// Scalar probe sum(y * r) with a fixed random r, so every output element
// contributes a distinct weight.
Tensor probe(const Tensor& y, const Tensor& r) { return sum(mul(y, r)); }

struct Suite {
  std::uint64_t seed;
  double tol;
  std::vector<GradCheckCase>& out;

  void check(const std::string& name, const Tensor& point, const ScalarFn& f) {
    out.push_back({name, seed, finite_diff_check(f, point, tol)});
  }
};

void run_seed(std::uint64_t seed, double tol, std::vector<GradCheckCase>& out) {
  Suite s{seed, tol, out};
  Rng rng(seed, "gradcheck");

  {
    const Tensor x = random(rng, {2, 3, 5, 5});
    const Tensor w = random(rng, {4, 3, 3, 3});
    const Tensor b = random(rng, {4});
    const Tensor r = random(rng, {2, 4, 5, 5});
    const Tensor r2 = random(rng, {2, 4, 3, 3});
    s.check("conv2d.input", x, [&](const Tensor& t) { return probe(conv2d(t, w, b, 1, 1), r); });
    s.check("conv2d.weight", w, [&](const Tensor& t) { return probe(conv2d(x, t, b, 1, 1), r); });
    s.check("conv2d.bias", b, [&](const Tensor& t) { return probe(conv2d(x, w, t, 1, 1), r); });
    s.check("conv2d.stride2", x, [&](const Tensor& t) { return probe(conv2d(t, w, b, 2, 1), r2); });
  }
  {
    const Tensor x = random(rng, {2, 3, 3, 3});
    const Tensor w = random(rng, {3, 2, 2, 2});
    const Tensor b = random(rng, {2});
    const Tensor r = random(rng, {2, 2, 6, 6});
    s.check("conv_transpose2d.input", x,
            [&](const Tensor& t) { return probe(conv_transpose2d(t, w, b), r); });
    s.check("conv_transpose2d.weight", w,
            [&](const Tensor& t) { return probe(conv_transpose2d(x, t, b), r); });
    s.check("conv_transpose2d.bias", b,
            [&](const Tensor& t) { return probe(conv_transpose2d(x, w, t), r); });
  }
  {
    const Tensor x = distinct(rng, {2, 2, 4, 4});
    const Tensor r = random(rng, {2, 2, 2, 2});
    s.check("maxpool2d", x, [&](const Tensor& t) { return probe(maxpool2d(t), r); });
  }
  {
    const Tensor x = random(rng, {3, 2, 3, 3});
    const Tensor g = random(rng, {2}, 0.5, 1.5);
    const Tensor b = random(rng, {2});
    const Tensor r = random(rng, {3, 2, 3, 3});
    auto bn = [](const Tensor& in, const Tensor& gamma, const Tensor& beta, bool training) {
      BatchNormState st = BatchNormState::for_channels(2);
      st.running_mean.mutable_data()[0] = 0.3;
      st.running_var.mutable_data()[1] = 1.7;
      return batchnorm2d(in, gamma, beta, st, training);
    };
    s.check("batchnorm2d.train.input", x, [&](const Tensor& t) { return probe(bn(t, g, b, true), r); });
    s.check("batchnorm2d.train.gamma", g, [&](const Tensor& t) { return probe(bn(x, t, b, true), r); });
    s.check("batchnorm2d.train.beta", b, [&](const Tensor& t) { return probe(bn(x, g, t, true), r); });
    s.check("batchnorm2d.eval.input", x, [&](const Tensor& t) { return probe(bn(t, g, b, false), r); });
  }
  {
    const Tensor x = away_from_zero(rng, {2, 3, 4, 4}, 0.01);
    const Tensor y = random(rng, {2, 3, 4, 4});
    const Tensor one = random(rng, {2, 1, 4, 4});
    const Tensor r = random(rng, {2, 3, 4, 4});
    s.check("relu", x, [&](const Tensor& t) { return probe(relu(t), r); });
    s.check("sigmoid", y, [&](const Tensor& t) { return probe(sigmoid(t), r); });
    s.check("reciprocal", random(rng, {2, 3, 4, 4}, 0.5, 2.0),
            [&](const Tensor& t) { return probe(reciprocal(t), r); });
    s.check("mul.lhs", y, [&](const Tensor& t) { return probe(mul(t, x), r); });
    s.check("mul.broadcast", one, [&](const Tensor& t) { return probe(mul(y, t), r); });
    s.check("add", y, [&](const Tensor& t) { return probe(add(scale(t, 1.5), add_scalar(t, 0.25)), r); });
    s.check("concat_slice", y, [&](const Tensor& t) {
      Tensor c = concat_channels(t, slice_channels(t, 1, 2));
      return probe(slice_channels(c, 1, 3), r);
    });
    s.check("mean", y, [&](const Tensor& t) { return mean(mul(t, t)); });
  }
  {
    constexpr std::size_t cin = 2, cout = 3, h = 5, w = 5;
    const Tensor x = random(rng, {1, cin, h, w});
    const Tensor off = fractional_offsets(rng, {1, 2 * kDeformTaps, h, w});
    const Tensor mod = random(rng, {1, kDeformTaps, h, w}, 0.1, 0.9);
    const Tensor wt = random(rng, {cout, cin, 3, 3});
    const Tensor b = random(rng, {cout});
    const Tensor r = random(rng, {1, cout, h, w});
    s.check("deform_conv2d.input", x,
            [&](const Tensor& t) { return probe(deform_conv2d_sampled(t, off, mod, wt, b), r); });
    s.check("deform_conv2d.offsets", off,
            [&](const Tensor& t) { return probe(deform_conv2d_sampled(x, t, mod, wt, b), r); });
    s.check("deform_conv2d.modulation", mod,
            [&](const Tensor& t) { return probe(deform_conv2d_sampled(x, off, t, wt, b), r); });
    s.check("deform_conv2d.weight", wt,
            [&](const Tensor& t) { return probe(deform_conv2d_sampled(x, off, mod, t, b), r); });
    s.check("deform_conv2d.bias", b,
            [&](const Tensor& t) { return probe(deform_conv2d_sampled(x, off, mod, wt, t), r); });

    // Whole layer including the offset / modulation branch.
    const Tensor bw = random(rng, {3 * kDeformTaps, cin, 3, 3}, -0.3, 0.3);
    const Tensor bb = random(rng, {3 * kDeformTaps}, -0.5, 0.5);
    auto layer = [&](const Tensor& in, const Tensor& branch_w) {
      DeformConvParams p{wt, b, {branch_w, bb, 1, 1}};
      return deform_conv2d(in, p);
    };
    s.check("deform_conv2d.layer.input", x, [&](const Tensor& t) { return probe(layer(t, bw), r); });
    s.check("deform_conv2d.layer.branch", bw, [&](const Tensor& t) { return probe(layer(x, t), r); });
  }
  {
    const Tensor x = random(rng, {2, 2, 4, 4});
    const Tensor r = random(rng, {2, 2, 4, 4});
    // A larger lambda exercises the leave-one-out term at full strength.
    const SimamConfig strong{.lambda = 0.5, .epsilon = 1e-8};
    s.check("simam_attend", x, [&](const Tensor& t) { return probe(simam_attend(t), r); });
    s.check("simam_attend.lambda0.5", x, [&](const Tensor& t) { return probe(simam_attend(t, strong), r); });
    s.check("simam_energy", x, [&](const Tensor& t) { return probe(simam_energy(t, strong), r); });
  }
  {
    const Tensor z = random(rng, {2, 2, 4, 4}, -3.0, 3.0);
    const Tensor g = binary(rng, {2, 2, 4, 4});
    LossConfig fixed;
    fixed.bce_pos_weight = 2.5;
    fixed.class_weights = {0.7, 1.3};
    const LossConfig autow;
    s.check("dice_loss", z, [&](const Tensor& t) { return dice_loss(t, g, fixed); });
    s.check("weighted_bce_loss", z, [&](const Tensor& t) { return weighted_bce_loss(t, g, fixed); });
    s.check("weighted_bce_loss.auto", z, [&](const Tensor& t) { return weighted_bce_loss(t, g, autow); });
    s.check("hybrid_loss", z, [&](const Tensor& t) { return hybrid_loss(t, g, autow); });
  }
}

}  // namespace

std::vector<GradCheckCase> run_gradcheck_suite(const std::vector<std::uint64_t>& seeds,
                                               double tolerance) {
  std::vector<GradCheckCase> out;
  for (std::uint64_t seed : seeds) run_seed(seed, tolerance, out);
  return out;
}

}  // namespace daunet
