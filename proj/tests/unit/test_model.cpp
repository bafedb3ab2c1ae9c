#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <set>

#include "daunet/error.hpp"
#include "daunet/model.hpp"

using namespace daunet;

namespace {

std::size_t conv(std::size_t cin, std::size_t cout, std::size_t k) { return cin * cout * k * k + cout; }
std::size_t block(std::size_t cin, std::size_t cout) { return conv(cin, cout, 3) + conv(cout, cout, 3) + 4 * cout; }

// Layer-by-layer count of the encoder, decoder and head, plus the chosen bottleneck.
std::size_t expected_params(const ModelConfig& c) {
  const std::size_t b = c.base_channels;
  std::size_t total = 0;
  std::size_t in = c.in_channels;
  for (int i = 0; i < c.depth; ++i) {
    total += block(in, b << i);
    in = b << i;
  }
  const std::size_t wide = b << c.depth;
  if (!c.use_deform_bottleneck) {
    total += block(in, wide);
  } else {
    const std::size_t q = wide / 4;
    const std::size_t mid = c.bottleneck_variant == BottleneckVariant::kWide ? wide : q;
    total += conv(in, q, 1) + 2 * q;
    total += conv(q, mid, 3) + conv(q, 27, 3) + 2 * mid;
    total += conv(mid, wide, 1) + 2 * wide;
  }
  for (int i = c.depth - 1; i >= 0; --i) {
    const std::size_t w = b << i;
    total += 2 * w * w * 4 + w;  // 2x2 up-convolution
    total += block(2 * w, w);
  }
  return total + conv(b, c.num_classes, 1);
}

ModelConfig small() {
  ModelConfig c;
  c.image_size = 32;
  c.base_channels = 8;
  c.num_classes = 2;
  return c;
}

}  // namespace

TEST(Model, DeskCountsMatchLayerOracle) {
  ModelConfig c;
  c.image_size = 64;
  c.base_channels = 16;
  c.num_classes = 2;
  EXPECT_EQ(build_unet(c, 0).param_count(), expected_params(c));
  EXPECT_EQ(build_unet(c, 0).param_count(), 1943778u);
  c.use_deform_bottleneck = true;
  c.use_simam = true;
  EXPECT_EQ(build_daunet(c, 0).param_count(), expected_params(c));
  c.bottleneck_variant = BottleneckVariant::kNarrow;
  EXPECT_EQ(build_daunet(c, 0).param_count(), expected_params(c));
}

TEST(Model, PaperScaleCounts) {
  ModelConfig c;  // defaults are the full-size configuration
  const std::size_t unet = build_unet(c, 0).param_count();
  EXPECT_EQ(unet, expected_params(c));
  EXPECT_NEAR(static_cast<double>(unet), 31.03e6, 0.02 * 31.03e6);
  c.use_deform_bottleneck = true;
  c.use_simam = true;
  const std::size_t daunet = build_daunet(c, 0).param_count();
  EXPECT_EQ(daunet, expected_params(c));
  EXPECT_GE(unet - daunet, 8'000'000u);
}

TEST(Model, ForwardShapesAndTrace) {
  ModelConfig c = small();
  c.use_deform_bottleneck = true;
  c.use_simam = true;
  Model m = build_daunet(c, 1);
  ForwardTrace trace;
  const Tensor y = m.forward(Tensor::zeros({3, 1, 32, 32}), &trace);
  EXPECT_EQ(y.shape(), (Shape{3, 2, 32, 32}));
  EXPECT_EQ(trace.bottleneck_offsets.shape(), (Shape{3, 18, 2, 2}));
  EXPECT_EQ(trace.bottleneck_modulation.shape(), (Shape{3, 9, 2, 2}));
  EXPECT_THROW(m.forward(Tensor::zeros({1, 1, 16, 16})), ShapeError);
  EXPECT_THROW(m.forward(Tensor::zeros({1, 2, 32, 32})), ShapeError);
}

TEST(Model, SummaryAddsUpToParamCount) {
  ModelConfig c = small();
  c.use_deform_bottleneck = true;
  Model m = build_daunet(c, 0);
  std::size_t total = 0;
  for (const auto& row : m.summary()) total += row.params;
  EXPECT_EQ(total, m.param_count());
  EXPECT_NE(m.summary_table().find("bottleneck"), std::string::npos);
}

TEST(Model, InitIsSeededAndNameStable) {
  ModelConfig c = small();
  Model a = build_unet(c, 7), b = build_unet(c, 7), other = build_unet(c, 8);
  ASSERT_EQ(a.parameters().size(), b.parameters().size());
  bool any_diff = false;
  for (std::size_t i = 0; i < a.parameters().size(); ++i) {
    const auto& pa = a.parameters()[i].tensor.data();
    const auto& pb = b.parameters()[i].tensor.data();
    EXPECT_TRUE(std::equal(pa.begin(), pa.end(), pb.begin()));
    const auto& po = other.parameters()[i].tensor.data();
    any_diff |= !std::equal(pa.begin(), pa.end(), po.begin());
  }
  EXPECT_TRUE(any_diff);

  // Switching the bottleneck keeps every shared parameter identical.
  ModelConfig d = c;
  d.use_deform_bottleneck = true;
  d.use_simam = true;
  Model da = build_daunet(d, 7);
  std::size_t shared = 0;
  for (const auto& p : da.parameters()) {
    for (const auto& q : a.parameters()) {
      if (p.name != q.name) continue;
      ++shared;
      EXPECT_TRUE(std::equal(p.tensor.data().begin(), p.tensor.data().end(), q.tensor.data().begin())) << p.name;
    }
  }
  EXPECT_GT(shared, 20u);
}

TEST(Model, InitRanges) {
  ModelConfig c = small();
  c.use_deform_bottleneck = true;
  Model m = build_daunet(c, 3);
  std::set<std::string> names;
  for (const auto& p : m.parameters()) {
    EXPECT_TRUE(names.insert(p.name).second) << "duplicate " << p.name;
    EXPECT_TRUE(p.tensor.requires_grad());
    if (p.name.find("offset") != std::string::npos) {
      for (double v : p.tensor.data()) EXPECT_EQ(v, 0.0);
    }
    if (p.name.ends_with(".bias") && p.name.find(".bn") == std::string::npos) {
      for (double v : p.tensor.data()) EXPECT_EQ(v, 0.0) << p.name;
    }
    if (p.tensor.rank() == 4 && p.name.find("offset") == std::string::npos) {
      const auto& s = p.tensor.shape();
      const double fan_in = static_cast<double>(p.name.find(".up.") != std::string::npos ? s[0] * s[2] * s[3]
                                                                                        : s[1] * s[2] * s[3]);
      for (double v : p.tensor.data()) EXPECT_LE(std::abs(v), std::sqrt(1.0 / fan_in)) << p.name;
    }
  }
}

TEST(Model, ConfigValidationAndJson) {
  ModelConfig c = small();
  c.use_simam = true;
  EXPECT_THROW(build_unet(c, 0), ConfigError);
  ModelConfig bad = small();
  bad.image_size = 36;  // not divisible by 2^depth
  EXPECT_THROW(bad.validate(), ConfigError);
  bad = small();
  bad.base_channels = 0;
  EXPECT_THROW(bad.validate(), ConfigError);
  EXPECT_THROW(parse_bottleneck_variant("medium"), ConfigError);

  ModelConfig j = small();
  j.use_deform_bottleneck = true;
  j.bottleneck_variant = BottleneckVariant::kNarrow;
  j.simam.lambda = 0.25;
  EXPECT_EQ(model_config_from_json(model_config_to_json(j)), j);
  EXPECT_THROW(model_config_from_json("{not json"), FormatError);
}

TEST(Model, EvalForwardIsDeterministic) {
  ModelConfig c = small();
  c.use_deform_bottleneck = true;
  c.use_simam = true;
  Model m = build_daunet(c, 5);
  Tensor x = Tensor::full({2, 1, 32, 32}, 0.3);
  x.mutable_data()[17] = 1.0;
  const Tensor a = m.forward(x), b = m.forward(x);
  EXPECT_TRUE(std::equal(a.data().begin(), a.data().end(), b.data().begin()));
}
