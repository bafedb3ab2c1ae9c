#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "daunet/ops.hpp"
#include "daunet/tensor.hpp"

// Modulated deformable 3x3 convolution: every tap of the sampling grid is
// displaced by a learned fractional offset, read with bilinear interpolation
// and scaled by a learned modulation weight in (0, 1).
namespace daunet {

struct Tap {
  int dy = 0;
  int dx = 0;
};

// Integer tap positions of a k x k kernel, row-major from (-k/2, -k/2).
struct ReceptiveGrid {
  std::vector<Tap> taps;

  static ReceptiveGrid square(std::size_t k);
  std::size_t size() const { return taps.size(); }
};

struct BilinearSample {
  double value = 0.0;
  double d_y = 0.0;
  double d_x = 0.0;
};

// Four-neighbour interpolation of an h x w plane at real (y, x); neighbours
// outside the plane read as zero. Derivatives are the right-continuous ones at
// integer coordinates.
double bilinear_sample(std::span<const double> plane, std::size_t h, std::size_t w, double y,
                       double x);
BilinearSample bilinear_sample_grad(std::span<const double> plane, std::size_t h, std::size_t w,
                                    double y, double x);

// Offset channel layout: [dy(tap0), dx(tap0), dy(tap1), dx(tap1), ...],
// taps in ReceptiveGrid order, units of pixels.
inline constexpr std::size_t kDeformKernel = 3;
inline constexpr std::size_t kDeformTaps = kDeformKernel * kDeformKernel;

struct DeformConvParams {
  Tensor main_weight;   // (C_out, C_in, 3, 3)
  Tensor main_bias;     // (C_out)
  Conv2dParams branch;  // 3x3, pad 1: C_in -> 3 * taps (offsets, then modulation logits)

  // Main weights uniform in +-sqrt(1 / (C_in * 9)) from the caller, branch
  // exactly zero so the first pass is half-scaled standard convolution.
  static DeformConvParams zero_branch(Tensor main_weight, Tensor main_bias);
};

struct OffsetModulation {
  Tensor offsets;     // (N, 2 * taps, H, W)
  Tensor modulation;  // (N, taps, H, W), post-sigmoid
};

OffsetModulation offset_mod_branch(const Tensor& input, const DeformConvParams& params);

// Deformable convolution with externally supplied offset and modulation
// fields. Differentiable with respect to all five inputs. stride 1, pad 1.
Tensor deform_conv2d_sampled(const Tensor& input, const Tensor& offsets,
                             const Tensor& modulation, const Tensor& weight, const Tensor& bias);

struct DeformConvResult {
  Tensor output;
  OffsetModulation fields;
};

DeformConvResult deform_conv2d_with_fields(const Tensor& input, const DeformConvParams& params);
Tensor deform_conv2d(const Tensor& input, const DeformConvParams& params);

// Writes batch element `index` of an offset field as CSV (header
// `y,x,tap,dy,dx`) and, when heatmap_path is non-empty, a binary PGM of the
// per-pixel mean offset length min-max scaled to 0-255.
void export_offsets(const Tensor& offsets, std::size_t index, const std::string& csv_path,
                    const std::string& heatmap_path);

// Parses a CSV written by export_offsets back into a (1, 2 * taps, H, W)
// field.
Tensor read_offsets_csv(const std::string& path);

}  // namespace daunet
