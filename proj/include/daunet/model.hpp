#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "daunet/deform_conv.hpp"
#include "daunet/ops.hpp"
#include "daunet/simam.hpp"
#include "daunet/tensor.hpp"

namespace daunet {

// Channel plan of the compress / deform / expand bottleneck, with C the
// bottleneck width and C_in the incoming encoder width:
//   kWide:   1x1 C_in -> C/4, deform 3x3 C/4 -> C,   1x1 C -> C
//   kNarrow: 1x1 C_in -> C/4, deform 3x3 C/4 -> C/4, 1x1 C/4 -> C
enum class BottleneckVariant { kWide, kNarrow };

std::string to_string(BottleneckVariant v);
BottleneckVariant parse_bottleneck_variant(const std::string& s);

struct ModelConfig {
  int in_channels = 1;
  int num_classes = 1;  // foreground channels; background is implicit
  int base_channels = 64;
  int depth = 4;
  bool use_deform_bottleneck = false;
  bool use_simam = false;
  int image_size = 256;
  BottleneckVariant bottleneck_variant = BottleneckVariant::kWide;
  SimamConfig simam;

  void validate() const;
  bool operator==(const ModelConfig&) const = default;
};

std::string model_config_to_json(const ModelConfig& cfg);
ModelConfig model_config_from_json(const std::string& text);

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

struct BlockSummary {
  std::string name;
  Shape output;  // (C, H, W)
  std::size_t params = 0;
};

// Bottleneck fields captured during forward() for inspection.
struct ForwardTrace {
  Tensor bottleneck_offsets;
  Tensor bottleneck_modulation;
};

class Model {
 public:
  // Seeded initialization: conv weights uniform in +-sqrt(1 / fan_in), biases
  // zero, norm scale 1 / shift 0, deformable branch zero. Each parameter
  // draws from its own named substream, so identically named parameters of
  // two configurations start identical.
  Model(const ModelConfig& cfg, std::uint64_t seed);
  Model(Model&&) = default;
  Model& operator=(Model&&) = default;
  Model(const Model&) = delete;
  Model& operator=(const Model&) = delete;

  const ModelConfig& config() const { return cfg_; }

  // (N, in_channels, S, S) -> (N, num_classes, S, S) logits.
  Tensor forward(const Tensor& batch, ForwardTrace* trace = nullptr);

  void set_training(bool training) { training_ = training; }
  bool training() const { return training_; }

  // Trainable tensors in registration order.
  const std::vector<NamedTensor>& parameters() const { return params_; }
  // Normalization running statistics.
  const std::vector<NamedTensor>& buffers() const { return buffers_; }
  // parameters() followed by buffers().
  std::vector<NamedTensor> state() const;

  std::size_t param_count() const;
  std::vector<BlockSummary> summary() const;
  std::string summary_table() const;

  void zero_grad();

 private:
  struct ConvLayer {
    Tensor weight;
    Tensor bias;
    std::size_t stride = 1;
    std::size_t padding = 0;
  };
  struct NormLayer {
    Tensor gamma;
    Tensor beta;
    BatchNormState state;
  };
  struct ConvBlock {
    ConvLayer conv1;
    NormLayer bn1;
    ConvLayer conv2;
    NormLayer bn2;
  };
  struct DeformBottleneck {
    ConvLayer compress;
    NormLayer bn1;
    DeformConvParams deform;
    NormLayer bn2;
    ConvLayer expand;
    NormLayer bn3;
  };
  struct UpStage {
    ConvLayer up;
    ConvBlock block;
  };

  ConvLayer make_conv(const std::string& name, std::size_t cin, std::size_t cout, std::size_t k,
                      std::size_t padding);
  NormLayer make_norm(const std::string& name, std::size_t channels);
  ConvBlock make_block(const std::string& name, std::size_t cin, std::size_t cout);
  void register_param(const std::string& name, const Tensor& t);
  void register_buffer(const std::string& name, const Tensor& t);
  Tensor init_uniform(const std::string& name, const Shape& shape, std::size_t fan_in);

  Tensor apply(const ConvLayer& l, const Tensor& x) const;
  Tensor apply(NormLayer& l, const Tensor& x);
  Tensor apply(ConvBlock& b, const Tensor& x);
  Tensor apply_bottleneck(const Tensor& x, ForwardTrace* trace);
  Tensor attend(const Tensor& x) const;

  ModelConfig cfg_;
  std::uint64_t seed_;
  bool training_ = false;
  std::vector<ConvBlock> encoder_;
  ConvBlock plain_bottleneck_;
  DeformBottleneck deform_bottleneck_;
  std::vector<UpStage> decoder_;  // decoder_[i] runs at encoder level i
  ConvLayer head_;
  std::vector<NamedTensor> params_;
  std::vector<NamedTensor> buffers_;
};

// Classical UNet; both ablation flags must be off.
Model build_unet(const ModelConfig& cfg, std::uint64_t seed);
// UNet with the deformable bottleneck and/or SimAM as the flags request.
Model build_daunet(const ModelConfig& cfg, std::uint64_t seed);

}  // namespace daunet
