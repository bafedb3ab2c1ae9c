#include <algorithm>
#include <cstring>
#include <limits>
#include <memory>

#include "conv_geometry.hpp"
#include "daunet/error.hpp"
#include "daunet/kernels.hpp"
#include "daunet/ops.hpp"

namespace daunet {
namespace detail {

namespace {

// Outputs o in [lo, hi) whose input coordinate o * stride - pad + tap lies in
// [0, extent).
struct OutRange {
  std::size_t lo, hi;
};

OutRange valid_outputs(std::size_t out, std::size_t extent, std::size_t stride, std::size_t pad,
                       std::size_t tap) {
  std::size_t lo = 0;
  if (tap < pad) lo = (pad - tap + stride - 1) / stride;
  std::size_t hi = 0;
  if (extent + pad > tap) hi = (extent + pad - tap - 1) / stride + 1;
  hi = std::min(hi, out);
  return {std::min(lo, hi), hi};
}

}  // namespace

void im2col(const double* img, const ConvGeom& g, double* col, std::size_t ldcol) {
  for (std::size_t ci = 0; ci < g.c; ++ci) {
    const double* plane = img + ci * g.h * g.w;
    for (std::size_t ky = 0; ky < g.k; ++ky) {
      for (std::size_t kx = 0; kx < g.k; ++kx) {
        double* row = col + ((ci * g.k + ky) * g.k + kx) * ldcol;
        const OutRange xr = valid_outputs(g.wo, g.w, g.stride, g.pad, kx);
        const OutRange yr = valid_outputs(g.ho, g.h, g.stride, g.pad, ky);
        for (std::size_t oy = 0; oy < g.ho; ++oy) {
          double* dst = row + oy * g.wo;
          if (oy < yr.lo || oy >= yr.hi) {
            std::fill(dst, dst + g.wo, 0.0);
            continue;
          }
          const double* src = plane + (oy * g.stride + ky - g.pad) * g.w + kx - g.pad;
          std::fill(dst, dst + xr.lo, 0.0);
          if (g.stride == 1) {
            std::copy(src + xr.lo, src + xr.hi, dst + xr.lo);
          } else {
            for (std::size_t ox = xr.lo; ox < xr.hi; ++ox) dst[ox] = src[ox * g.stride];
          }
          std::fill(dst + xr.hi, dst + g.wo, 0.0);
        }
      }
    }
  }
}

void col2im(const double* col, std::size_t ldcol, const ConvGeom& g, double* img) {
  for (std::size_t ci = 0; ci < g.c; ++ci) {
    double* plane = img + ci * g.h * g.w;
    for (std::size_t ky = 0; ky < g.k; ++ky) {
      for (std::size_t kx = 0; kx < g.k; ++kx) {
        const double* row = col + ((ci * g.k + ky) * g.k + kx) * ldcol;
        const OutRange xr = valid_outputs(g.wo, g.w, g.stride, g.pad, kx);
        const OutRange yr = valid_outputs(g.ho, g.h, g.stride, g.pad, ky);
        for (std::size_t oy = yr.lo; oy < yr.hi; ++oy) {
          const double* src = row + oy * g.wo;
          double* dst = plane + (oy * g.stride + ky - g.pad) * g.w + kx - g.pad;
          if (g.stride == 1) {
            for (std::size_t ox = xr.lo; ox < xr.hi; ++ox) dst[ox] += src[ox];
          } else {
            for (std::size_t ox = xr.lo; ox < xr.hi; ++ox) dst[ox * g.stride] += src[ox];
          }
        }
      }
    }
  }
}

}  // namespace detail

namespace {

using detail::ConvGeom;

void require_rank4(const Tensor& t, const char* what) {
  if (!t.defined() || t.rank() != 4) {
    throw ShapeError(std::string(what) + " must be a rank-4 tensor, got " +
                     (t.defined() ? shape_str(t.shape()) : std::string("undefined")));
  }
}

void check_bias(const Tensor& bias, std::size_t channels, const char* op) {
  if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != channels)) {
    throw ShapeError(std::string(op) + ": bias shape " + shape_str(bias.shape()) +
                     " does not match output channels " + std::to_string(channels));
  }
}

// Copies image block [n0, n0+gn) of an (N, C, HW) array into a C x (gn*HW)
// matrix, or back (scatter, accumulating).
void gather_group(const double* src, std::size_t c, std::size_t hw, std::size_t gn,
                  double* dst) {
  const std::size_t ld = gn * hw;
  for (std::size_t j = 0; j < gn; ++j) {
    for (std::size_t ci = 0; ci < c; ++ci) {
      std::memcpy(dst + ci * ld + j * hw, src + (j * c + ci) * hw, hw * sizeof(double));
    }
  }
}

void scatter_group_add(const double* src, std::size_t c, std::size_t hw, std::size_t gn,
                       double* dst) {
  const std::size_t ld = gn * hw;
  for (std::size_t j = 0; j < gn; ++j) {
    for (std::size_t ci = 0; ci < c; ++ci) {
      kernels::axpy(1.0, src + ci * ld + j * hw, dst + (j * c + ci) * hw, hw);
    }
  }
}

void add_bias(const Tensor& bias, std::size_t n, std::size_t c, std::size_t hw, double* out) {
  if (!bias.defined()) return;
  auto b = bias.data();
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t ci = 0; ci < c; ++ci) {
      double* dst = out + (i * c + ci) * hw;
      const double v = b[ci];
      for (std::size_t p = 0; p < hw; ++p) dst[p] += v;
    }
  }
}

void accumulate_bias_grad(Tensor& bias, std::span<const double> gout, std::size_t n,
                          std::size_t c, std::size_t hw) {
  if (!bias.defined() || !bias.requires_grad()) return;
  auto gb = bias.grad_accumulator();
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t ci = 0; ci < c; ++ci) {
      const double* src = gout.data() + (i * c + ci) * hw;
      double s = 0.0;
      for (std::size_t p = 0; p < hw; ++p) s += src[p];
      gb[ci] += s;
    }
  }
}

}  // namespace

Tensor conv2d(const Tensor& input, const Conv2dParams& params) {
  return conv2d(input, params.weight, params.bias, params.stride, params.padding);
}

Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias, std::size_t stride,
              std::size_t padding) {
  require_rank4(input, "conv2d input");
  require_rank4(weight, "conv2d weight");
  const std::size_t n = input.dim(0), cin = input.dim(1), h = input.dim(2), w = input.dim(3);
  const std::size_t cout = weight.dim(0), k = weight.dim(2);
  if (weight.dim(1) != cin) {
    throw ShapeError("conv2d: input channels " + std::to_string(cin) +
                     " != weight C_in (dim 1) " + std::to_string(weight.dim(1)));
  }
  if (weight.dim(3) != k) throw ShapeError("conv2d: kernel must be square");
  if (stride == 0) throw ShapeError("conv2d: stride must be positive");
  if (h + 2 * padding < k || w + 2 * padding < k) {
    throw ShapeError("conv2d: padded spatial size " + std::to_string(h + 2 * padding) + "x" +
                     std::to_string(w + 2 * padding) + " smaller than kernel " +
                     std::to_string(k));
  }
  check_bias(bias, cout, "conv2d");

  ConvGeom g{cin, h, w, k, stride, padding, (h + 2 * padding - k) / stride + 1,
             (w + 2 * padding - k) / stride + 1};
  const std::size_t kdim = g.rows();
  const std::size_t hwo = g.cols();
  const std::size_t group = detail::batch_group(n, hwo);

  std::vector<double> out(n * cout * hwo);
  std::vector<double> col(kdim * group * hwo);
  std::vector<double> y(group > 1 ? cout * group * hwo : 0);
  auto x = input.data();
  auto wt = weight.data();
  for (std::size_t n0 = 0; n0 < n; n0 += group) {
    const std::size_t gn = std::min(group, n - n0);
    const std::size_t ld = gn * hwo;
    for (std::size_t j = 0; j < gn; ++j) {
      detail::im2col(x.data() + (n0 + j) * cin * h * w, g, col.data() + j * hwo, ld);
    }
    double* dst = gn == 1 ? out.data() + n0 * cout * hwo : y.data();
    kernels::gemm({.m = cout, .n = ld, .k = kdim, .a = wt.data(), .lda = kdim,
                   .b = col.data(), .ldb = ld, .c = dst, .ldc = ld});
    if (gn > 1) scatter_group_add(y.data(), cout, hwo, gn, out.data() + n0 * cout * hwo);
  }
  add_bias(bias, n, cout, hwo, out.data());

  return Tensor::make_result(
      {n, cout, g.ho, g.wo}, std::move(out), "conv2d", {input, weight, bias},
      [g, n, cout, group](std::span<const double> gout, std::span<Tensor> in) {
        Tensor& x_t = in[0];
        Tensor& w_t = in[1];
        accumulate_bias_grad(in[2], gout, n, cout, g.cols());
        const bool need_x = x_t.requires_grad();
        const bool need_w = w_t.requires_grad();
        if (!need_x && !need_w) return;
        const std::size_t kdim = g.rows();
        const std::size_t hwo = g.cols();
        const std::size_t img = g.c * g.h * g.w;
        std::vector<double> col(kdim * group * hwo);
        std::vector<double> gy(group > 1 ? cout * group * hwo : 0);
        auto x = x_t.data();
        auto wt = w_t.data();
        std::span<double> gx = need_x ? x_t.grad_accumulator() : std::span<double>();
        std::span<double> gw = need_w ? w_t.grad_accumulator() : std::span<double>();
        for (std::size_t n0 = 0; n0 < n; n0 += group) {
          const std::size_t gn = std::min(group, n - n0);
          const std::size_t ld = gn * hwo;
          const double* gsrc = gout.data() + n0 * cout * hwo;
          if (gn > 1) {
            gather_group(gsrc, cout, hwo, gn, gy.data());
            gsrc = gy.data();
          }
          if (need_w) {
            for (std::size_t j = 0; j < gn; ++j) {
              detail::im2col(x.data() + (n0 + j) * img, g, col.data() + j * hwo, ld);
            }
            kernels::gemm({.trans_b = true, .m = cout, .n = kdim, .k = ld, .a = gsrc, .lda = ld,
                           .b = col.data(), .ldb = ld, .c = gw.data(), .ldc = kdim,
                           .accumulate = true});
          }
          if (need_x) {
            kernels::gemm({.trans_a = true, .m = kdim, .n = ld, .k = cout, .a = wt.data(),
                           .lda = kdim, .b = gsrc, .ldb = ld, .c = col.data(), .ldc = ld});
            for (std::size_t j = 0; j < gn; ++j) {
              detail::col2im(col.data() + j * hwo, ld, g, gx.data() + (n0 + j) * img);
            }
          }
        }
      });
}

Tensor conv_transpose2d(const Tensor& input, const Tensor& weight, const Tensor& bias,
                        std::size_t stride, std::size_t padding) {
  require_rank4(input, "conv_transpose2d input");
  require_rank4(weight, "conv_transpose2d weight");
  const std::size_t n = input.dim(0), cin = input.dim(1), h = input.dim(2), w = input.dim(3);
  const std::size_t cout = weight.dim(1), k = weight.dim(2);
  if (weight.dim(0) != cin) {
    throw ShapeError("conv_transpose2d: input channels " + std::to_string(cin) +
                     " != weight C_in (dim 0) " + std::to_string(weight.dim(0)));
  }
  if (weight.dim(3) != k) throw ShapeError("conv_transpose2d: kernel must be square");
  if (stride == 0) throw ShapeError("conv_transpose2d: stride must be positive");
  if ((h - 1) * stride + k <= 2 * padding || (w - 1) * stride + k <= 2 * padding) {
    throw ShapeError("conv_transpose2d: padding too large for input size");
  }
  check_bias(bias, cout, "conv_transpose2d");
  const std::size_t ho = (h - 1) * stride + k - 2 * padding;
  const std::size_t wo = (w - 1) * stride + k - 2 * padding;
  // The output is the "image" side of a conv whose grid is the input.
  ConvGeom g{cout, ho, wo, k, stride, padding, h, w};
  const std::size_t kdim = g.rows();  // cout * k * k
  const std::size_t hw = h * w;
  const std::size_t group = detail::batch_group(n, hw);

  std::vector<double> out(n * cout * ho * wo, 0.0);
  std::vector<double> xg(group > 1 ? cin * group * hw : 0);
  std::vector<double> col(kdim * group * hw);
  auto x = input.data();
  auto wt = weight.data();
  for (std::size_t n0 = 0; n0 < n; n0 += group) {
    const std::size_t gn = std::min(group, n - n0);
    const std::size_t ld = gn * hw;
    const double* xsrc = x.data() + n0 * cin * hw;
    if (gn > 1) {
      gather_group(xsrc, cin, hw, gn, xg.data());
      xsrc = xg.data();
    }
    kernels::gemm({.trans_a = true, .m = kdim, .n = ld, .k = cin, .a = wt.data(), .lda = kdim,
                   .b = xsrc, .ldb = ld, .c = col.data(), .ldc = ld});
    for (std::size_t j = 0; j < gn; ++j) {
      detail::col2im(col.data() + j * hw, ld, g, out.data() + (n0 + j) * cout * ho * wo);
    }
  }
  add_bias(bias, n, cout, ho * wo, out.data());

  return Tensor::make_result(
      {n, cout, ho, wo}, std::move(out), "conv_transpose2d", {input, weight, bias},
      [g, n, cin, group](std::span<const double> gout, std::span<Tensor> in) {
        Tensor& x_t = in[0];
        Tensor& w_t = in[1];
        accumulate_bias_grad(in[2], gout, n, g.c, g.h * g.w);
        const bool need_x = x_t.requires_grad();
        const bool need_w = w_t.requires_grad();
        if (!need_x && !need_w) return;
        const std::size_t kdim = g.rows();
        const std::size_t hw = g.cols();
        const std::size_t out_img = g.c * g.h * g.w;
        std::vector<double> col(kdim * group * hw);
        std::vector<double> buf(cin * group * hw);
        auto x = x_t.data();
        auto wt = w_t.data();
        std::span<double> gx = need_x ? x_t.grad_accumulator() : std::span<double>();
        std::span<double> gw = need_w ? w_t.grad_accumulator() : std::span<double>();
        for (std::size_t n0 = 0; n0 < n; n0 += group) {
          const std::size_t gn = std::min(group, n - n0);
          const std::size_t ld = gn * hw;
          for (std::size_t j = 0; j < gn; ++j) {
            detail::im2col(gout.data() + (n0 + j) * out_img, g, col.data() + j * hw, ld);
          }
          if (need_w) {
            const double* xsrc = x.data() + n0 * cin * hw;
            if (gn > 1) {
              gather_group(xsrc, cin, hw, gn, buf.data());
              xsrc = buf.data();
            }
            kernels::gemm({.trans_b = true, .m = cin, .n = kdim, .k = ld, .a = xsrc, .lda = ld,
                           .b = col.data(), .ldb = ld, .c = gw.data(), .ldc = kdim,
                           .accumulate = true});
          }
          if (need_x) {
            if (gn == 1) {
              kernels::gemm({.m = cin, .n = ld, .k = kdim, .a = wt.data(), .lda = kdim,
                             .b = col.data(), .ldb = ld, .c = gx.data() + n0 * cin * hw,
                             .ldc = ld, .accumulate = true});
            } else {
              kernels::gemm({.m = cin, .n = ld, .k = kdim, .a = wt.data(), .lda = kdim,
                             .b = col.data(), .ldb = ld, .c = buf.data(), .ldc = ld});
              scatter_group_add(buf.data(), cin, hw, gn, gx.data() + n0 * cin * hw);
            }
          }
        }
      });
}

Tensor maxpool2d(const Tensor& input, std::size_t window) {
  require_rank4(input, "maxpool2d input");
  const std::size_t n = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
  if (window == 0 || h % window != 0 || w % window != 0) {
    throw ShapeError("maxpool2d: spatial size " + std::to_string(h) + "x" + std::to_string(w) +
                     " not divisible by window " + std::to_string(window));
  }
  const std::size_t ho = h / window, wo = w / window;
  std::vector<double> out(n * c * ho * wo);
  auto argmax = std::make_shared<std::vector<std::size_t>>(out.size());
  auto x = input.data();
  std::size_t o = 0;
  for (std::size_t plane = 0; plane < n * c; ++plane) {
    const std::size_t base = plane * h * w;
    for (std::size_t oy = 0; oy < ho; ++oy) {
      for (std::size_t ox = 0; ox < wo; ++ox, ++o) {
        std::size_t best = base + oy * window * w + ox * window;
        double best_v = x[best];
        for (std::size_t dy = 0; dy < window; ++dy) {
          for (std::size_t dx = 0; dx < window; ++dx) {
            const std::size_t idx = base + (oy * window + dy) * w + ox * window + dx;
            if (x[idx] > best_v) {
              best_v = x[idx];
              best = idx;
            }
          }
        }
        out[o] = best_v;
        (*argmax)[o] = best;
      }
    }
  }
  return Tensor::make_result({n, c, ho, wo}, std::move(out), "maxpool2d", {input},
                             [argmax](std::span<const double> gout, std::span<Tensor> in) {
                               auto gx = in[0].grad_accumulator();
                               for (std::size_t i = 0; i < gout.size(); ++i) {
                                 gx[(*argmax)[i]] += gout[i];
                               }
                             });
}

}  // namespace daunet
