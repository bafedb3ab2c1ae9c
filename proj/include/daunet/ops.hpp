#pragma once

#include <cstddef>
#include <string>

#include "daunet/tensor.hpp"

// Differentiable operators on NCHW tensors. All spatial operators use zero
// padding.
namespace daunet {

// weight (C_out, C_in, k, k); bias (C_out) or undefined.
struct Conv2dParams {
  Tensor weight;
  Tensor bias;
  std::size_t stride = 1;
  std::size_t padding = 0;
};

Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias,
              std::size_t stride = 1, std::size_t padding = 0);
Tensor conv2d(const Tensor& input, const Conv2dParams& params);

// Adjoint of conv2d with the same stride/padding. weight is laid out
// (C_in, C_out, k, k) as in the usual up-convolution convention; output
// spatial size is (H - 1) * stride - 2 * padding + k.
Tensor conv_transpose2d(const Tensor& input, const Tensor& weight, const Tensor& bias,
                        std::size_t stride = 2, std::size_t padding = 0);

// Non-overlapping window x window max pooling. Ties resolve to the first
// element in row-major order within the window.
Tensor maxpool2d(const Tensor& input, std::size_t window = 2);

Tensor relu(const Tensor& input);
Tensor sigmoid(const Tensor& input);
Tensor reciprocal(const Tensor& input);

Tensor add(const Tensor& a, const Tensor& b);
Tensor add_scalar(const Tensor& a, double value);
Tensor scale(const Tensor& a, double factor);

// Elementwise product. b must have a's shape, or be rank 4 with one channel
// and match a in N, H, W; then it is broadcast across a's channels.
Tensor mul(const Tensor& a, const Tensor& b);

Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);

// Channel-wise concatenation, a's channels first.
Tensor concat_channels(const Tensor& a, const Tensor& b);
Tensor slice_channels(const Tensor& input, std::size_t begin, std::size_t count);

struct BatchNormState {
  Tensor running_mean;
  Tensor running_var;
  double momentum = 0.1;
  double eps = 1e-5;

  static BatchNormState for_channels(std::size_t channels);
};

// Per-channel normalization over N, H, W. In training mode the batch
// statistics are used and the running statistics updated (unbiased variance
// for the running estimate); in eval mode the running statistics are used.
Tensor batchnorm2d(const Tensor& input, const Tensor& gamma, const Tensor& beta,
                   BatchNormState& state, bool training);

// Row-major dump, one value per line, preceded by a `dims=...` header.
void write_tensor_csv(const Tensor& t, const std::string& path);
Tensor read_tensor_csv(const std::string& path);

}  // namespace daunet
