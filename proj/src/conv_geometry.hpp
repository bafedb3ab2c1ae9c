#pragma once

#include <algorithm>
#include <cstddef>

namespace daunet::detail {

// Geometry of a zero-padded sliding window: an image of c x h x w sampled
// on an ho x wo output grid.
struct ConvGeom {
  std::size_t c = 0, h = 0, w = 0;
  std::size_t k = 1, stride = 1, pad = 0;
  std::size_t ho = 0, wo = 0;

  std::size_t rows() const { return c * k * k; }
  std::size_t cols() const { return ho * wo; }
};

// col[(ci*k + ky)*k + kx][oy*wo + ox] = img[ci][oy*s - p + ky][ox*s - p + kx]
// (zero outside). col has leading dimension ldcol >= g.cols().
void im2col(const double* img, const ConvGeom& g, double* col, std::size_t ldcol);

// Adjoint of im2col; accumulates into img.
void col2im(const double* col, std::size_t ldcol, const ConvGeom& g, double* img);

// Images per GEMM call: enough columns to keep the micro-kernel busy on
// small feature maps, one image at a time on large ones.
inline std::size_t batch_group(std::size_t batch, std::size_t cols_per_image) {
  const std::size_t want = (512 + cols_per_image - 1) / cols_per_image;
  return std::clamp<std::size_t>(want, 1, batch);
}

}  // namespace daunet::detail
