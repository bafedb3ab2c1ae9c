#include "daunet/deform_conv.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "conv_geometry.hpp"
#include "daunet/error.hpp"
#include "daunet/io.hpp"
#include "daunet/kernels.hpp"

namespace daunet {
namespace {

// Bilinear stencil of one sampling point: flat plane indices of the four
// neighbours (-1 when outside) with their weights and the weights'
// derivatives with respect to y and x.
struct Stencil {
  long idx[4];
  double w[4];
  double wy[4];
  double wx[4];
};

Stencil make_stencil(std::size_t h, std::size_t w, double y, double x) {
  const double fy = std::floor(y);
  const double fx = std::floor(x);
  const double ly = y - fy;
  const double lx = x - fx;
  const long y0 = static_cast<long>(fy);
  const long x0 = static_cast<long>(fx);
  Stencil s;
  const long ys[4] = {y0, y0, y0 + 1, y0 + 1};
  const long xs[4] = {x0, x0 + 1, x0, x0 + 1};
  s.w[0] = (1.0 - ly) * (1.0 - lx);
  s.w[1] = (1.0 - ly) * lx;
  s.w[2] = ly * (1.0 - lx);
  s.w[3] = ly * lx;
  s.wy[0] = -(1.0 - lx);
  s.wy[1] = -lx;
  s.wy[2] = 1.0 - lx;
  s.wy[3] = lx;
  s.wx[0] = -(1.0 - ly);
  s.wx[1] = 1.0 - ly;
  s.wx[2] = -ly;
  s.wx[3] = ly;
  const long hh = static_cast<long>(h);
  const long ww = static_cast<long>(w);
  for (int i = 0; i < 4; ++i) {
    const bool inside = ys[i] >= 0 && ys[i] < hh && xs[i] >= 0 && xs[i] < ww;
    s.idx[i] = inside ? ys[i] * ww + xs[i] : -1;
  }
  return s;
}

double stencil_value(const Stencil& s, const double* plane) {
  double v = 0.0;
  for (int i = 0; i < 4; ++i) {
    if (s.idx[i] >= 0) v += s.w[i] * plane[s.idx[i]];
  }
  return v;
}

const ReceptiveGrid& grid3() {
  static const ReceptiveGrid g = ReceptiveGrid::square(kDeformKernel);
  return g;
}

Stencil tap_stencil(std::size_t h, std::size_t w, std::size_t oy, std::size_t ox, const Tap& tap,
                    const double* off, std::size_t t, std::size_t hw) {
  const std::size_t p = oy * w + ox;
  const double y = static_cast<double>(oy) + tap.dy + off[(2 * t) * hw + p];
  const double x = static_cast<double>(ox) + tap.dx + off[(2 * t + 1) * hw + p];
  return make_stencil(h, w, y, x);
}

// Modulated deformable column matrix of one image: rows (c * taps + t), the
// image's hw columns starting at col, row stride ld.
void deform_im2col(const double* img, const double* off, const double* mod, std::size_t c,
                   std::size_t h, std::size_t w, double* col, std::size_t ld) {
  const std::size_t hw = h * w;
  const auto& taps = grid3().taps;
  for (std::size_t t = 0; t < kDeformTaps; ++t) {
    for (std::size_t oy = 0; oy < h; ++oy) {
      for (std::size_t ox = 0; ox < w; ++ox) {
        const std::size_t p = oy * w + ox;
        const Stencil s = tap_stencil(h, w, oy, ox, taps[t], off, t, hw);
        const double m = mod[t * hw + p];
        for (std::size_t ci = 0; ci < c; ++ci) {
          col[(ci * kDeformTaps + t) * ld + p] = m * stencil_value(s, img + ci * hw);
        }
      }
    }
  }
}

void require_shape(const Tensor& t, const Shape& want, const char* what) {
  if (!t.defined() || t.shape() != want) {
    throw ShapeError(std::string("deform_conv2d: ") + what + " shape " +
                     (t.defined() ? shape_str(t.shape()) : std::string("undefined")) +
                     ", expected " + shape_str(want));
  }
}

}  // namespace

ReceptiveGrid ReceptiveGrid::square(std::size_t k) {
  if (k % 2 == 0) throw ShapeError("receptive grid needs an odd kernel size");
  ReceptiveGrid g;
  const int r = static_cast<int>(k / 2);
  for (int dy = -r; dy <= r; ++dy) {
    for (int dx = -r; dx <= r; ++dx) g.taps.push_back({dy, dx});
  }
  return g;
}

double bilinear_sample(std::span<const double> plane, std::size_t h, std::size_t w, double y,
                       double x) {
  return stencil_value(make_stencil(h, w, y, x), plane.data());
}

BilinearSample bilinear_sample_grad(std::span<const double> plane, std::size_t h, std::size_t w,
                                    double y, double x) {
  const Stencil s = make_stencil(h, w, y, x);
  BilinearSample r;
  for (int i = 0; i < 4; ++i) {
    if (s.idx[i] < 0) continue;
    const double v = plane[s.idx[i]];
    r.value += s.w[i] * v;
    r.d_y += s.wy[i] * v;
    r.d_x += s.wx[i] * v;
  }
  return r;
}

DeformConvParams DeformConvParams::zero_branch(Tensor main_weight, Tensor main_bias) {
  if (main_weight.rank() != 4 || main_weight.dim(2) != kDeformKernel ||
      main_weight.dim(3) != kDeformKernel) {
    throw ShapeError("deformable convolution supports only 3x3 kernels, got weight " +
                     shape_str(main_weight.shape()));
  }
  const std::size_t cin = main_weight.dim(1);
  DeformConvParams p;
  p.main_weight = std::move(main_weight);
  p.main_bias = std::move(main_bias);
  p.branch.weight = Tensor::zeros({3 * kDeformTaps, cin, kDeformKernel, kDeformKernel}, true);
  p.branch.bias = Tensor::zeros({3 * kDeformTaps}, true);
  p.branch.stride = 1;
  p.branch.padding = 1;
  return p;
}

OffsetModulation offset_mod_branch(const Tensor& input, const DeformConvParams& params) {
  if (params.branch.weight.dim(0) != 3 * kDeformTaps) {
    throw ShapeError("offset branch must produce " + std::to_string(3 * kDeformTaps) +
                     " channels, weight has " + std::to_string(params.branch.weight.dim(0)));
  }
  Tensor raw = conv2d(input, params.branch);
  return {slice_channels(raw, 0, 2 * kDeformTaps),
          sigmoid(slice_channels(raw, 2 * kDeformTaps, kDeformTaps))};
}

Tensor deform_conv2d_sampled(const Tensor& input, const Tensor& offsets,
                             const Tensor& modulation, const Tensor& weight,
                             const Tensor& bias) {
  if (input.rank() != 4) throw ShapeError("deform_conv2d: rank-4 input required");
  if (weight.rank() != 4 || weight.dim(2) != kDeformKernel || weight.dim(3) != kDeformKernel) {
    throw ShapeError("deform_conv2d: only 3x3 kernels (stride 1, pad 1) are supported, got " +
                     (weight.defined() ? shape_str(weight.shape()) : std::string("undefined")));
  }
  const std::size_t n = input.dim(0), cin = input.dim(1), h = input.dim(2), w = input.dim(3);
  const std::size_t cout = weight.dim(0);
  if (weight.dim(1) != cin) {
    throw ShapeError("deform_conv2d: input channels " + std::to_string(cin) +
                     " != weight C_in (dim 1) " + std::to_string(weight.dim(1)));
  }
  require_shape(offsets, {n, 2 * kDeformTaps, h, w}, "offsets");
  require_shape(modulation, {n, kDeformTaps, h, w}, "modulation");
  if (bias.defined()) require_shape(bias, {cout}, "bias");

  const std::size_t hw = h * w;
  const std::size_t kdim = cin * kDeformTaps;
  const std::size_t group = detail::batch_group(n, hw);
  std::vector<double> out(n * cout * hw, 0.0);
  std::vector<double> col(kdim * group * hw);
  std::vector<double> y(cout * group * hw);
  auto x = input.data();
  auto off = offsets.data();
  auto mod = modulation.data();
  for (std::size_t n0 = 0; n0 < n; n0 += group) {
    const std::size_t gn = std::min(group, n - n0);
    const std::size_t ld = gn * hw;
    for (std::size_t j = 0; j < gn; ++j) {
      const std::size_t i = n0 + j;
      deform_im2col(x.data() + i * cin * hw, off.data() + i * 2 * kDeformTaps * hw,
                    mod.data() + i * kDeformTaps * hw, cin, h, w, col.data() + j * hw, ld);
    }
    kernels::gemm({.m = cout, .n = ld, .k = kdim, .a = weight.data().data(), .lda = kdim,
                   .b = col.data(), .ldb = ld, .c = y.data(), .ldc = ld});
    for (std::size_t j = 0; j < gn; ++j) {
      for (std::size_t co = 0; co < cout; ++co) {
        const double b = bias.defined() ? bias.data()[co] : 0.0;
        const double* src = y.data() + co * ld + j * hw;
        double* dst = out.data() + ((n0 + j) * cout + co) * hw;
        for (std::size_t p = 0; p < hw; ++p) dst[p] = src[p] + b;
      }
    }
  }

  return Tensor::make_result(
      {n, cout, h, w}, std::move(out), "deform_conv2d", {input, offsets, modulation, weight, bias},
      [n, cin, cout, h, w, group](std::span<const double> gout, std::span<Tensor> in) {
        const std::size_t hw = h * w;
        const std::size_t kdim = cin * kDeformTaps;
        auto x = in[0].data();
        auto off = in[1].data();
        auto mod = in[2].data();
        auto wt = in[3].data();
        auto want = [&](std::size_t i) { return in[i].defined() && in[i].requires_grad(); };
        std::span<double> gx = want(0) ? in[0].grad_accumulator() : std::span<double>();
        std::span<double> goff = want(1) ? in[1].grad_accumulator() : std::span<double>();
        std::span<double> gmod = want(2) ? in[2].grad_accumulator() : std::span<double>();
        std::span<double> gw = want(3) ? in[3].grad_accumulator() : std::span<double>();
        if (want(4)) {
          auto gb = in[4].grad_accumulator();
          for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t co = 0; co < cout; ++co) {
              const double* src = gout.data() + (i * cout + co) * hw;
              double s = 0.0;
              for (std::size_t p = 0; p < hw; ++p) s += src[p];
              gb[co] += s;
            }
          }
        }
        const bool need_sampling = !gx.empty() || !goff.empty() || !gmod.empty();
        if (gw.empty() && !need_sampling) return;

        const auto& taps = grid3().taps;
        std::vector<double> col(kdim * group * hw);
        std::vector<double> gy(cout * group * hw);
        for (std::size_t n0 = 0; n0 < n; n0 += group) {
          const std::size_t gn = std::min(group, n - n0);
          const std::size_t ld = gn * hw;
          for (std::size_t j = 0; j < gn; ++j) {
            for (std::size_t co = 0; co < cout; ++co) {
              std::copy_n(gout.data() + ((n0 + j) * cout + co) * hw, hw,
                          gy.data() + co * ld + j * hw);
            }
          }
          if (!gw.empty()) {
            for (std::size_t j = 0; j < gn; ++j) {
              const std::size_t i = n0 + j;
              deform_im2col(x.data() + i * cin * hw, off.data() + i * 2 * kDeformTaps * hw,
                            mod.data() + i * kDeformTaps * hw, cin, h, w, col.data() + j * hw,
                            ld);
            }
            kernels::gemm({.trans_b = true, .m = cout, .n = kdim, .k = ld, .a = gy.data(),
                           .lda = ld, .b = col.data(), .ldb = ld, .c = gw.data(), .ldc = kdim,
                           .accumulate = true});
          }
          if (!need_sampling) continue;
          // col <- d loss / d col
          kernels::gemm({.trans_a = true, .m = kdim, .n = ld, .k = cout, .a = wt.data(),
                         .lda = kdim, .b = gy.data(), .ldb = ld, .c = col.data(), .ldc = ld});
          for (std::size_t j = 0; j < gn; ++j) {
            const std::size_t i = n0 + j;
            const double* img = x.data() + i * cin * hw;
            const double* offi = off.data() + i * 2 * kDeformTaps * hw;
            const double* modi = mod.data() + i * kDeformTaps * hw;
            for (std::size_t t = 0; t < kDeformTaps; ++t) {
              for (std::size_t oy = 0; oy < h; ++oy) {
                for (std::size_t ox = 0; ox < w; ++ox) {
                  const std::size_t p = oy * w + ox;
                  const Stencil s = tap_stencil(h, w, oy, ox, taps[t], offi, t, hw);
                  const double m = modi[t * hw + p];
                  double g_m = 0.0;
                  double g_y = 0.0;
                  double g_x = 0.0;
                  for (std::size_t ci = 0; ci < cin; ++ci) {
                    const double g = col[(ci * kDeformTaps + t) * ld + j * hw + p];
                    if (g == 0.0) continue;
                    const double* plane = img + ci * hw;
                    double* gplane = gx.empty() ? nullptr : gx.data() + i * cin * hw + ci * hw;
                    for (int q = 0; q < 4; ++q) {
                      if (s.idx[q] < 0) continue;
                      const double v = plane[s.idx[q]];
                      g_m += g * s.w[q] * v;
                      g_y += g * s.wy[q] * v;
                      g_x += g * s.wx[q] * v;
                      if (gplane) gplane[s.idx[q]] += g * m * s.w[q];
                    }
                  }
                  if (!gmod.empty()) gmod[i * kDeformTaps * hw + t * hw + p] += g_m;
                  if (!goff.empty()) {
                    goff[i * 2 * kDeformTaps * hw + (2 * t) * hw + p] += m * g_y;
                    goff[i * 2 * kDeformTaps * hw + (2 * t + 1) * hw + p] += m * g_x;
                  }
                }
              }
            }
          }
        }
      });
}

DeformConvResult deform_conv2d_with_fields(const Tensor& input, const DeformConvParams& params) {
  OffsetModulation fields = offset_mod_branch(input, params);
  Tensor out = deform_conv2d_sampled(input, fields.offsets, fields.modulation,
                                     params.main_weight, params.main_bias);
  return {out, fields};
}

Tensor deform_conv2d(const Tensor& input, const DeformConvParams& params) {
  return deform_conv2d_with_fields(input, params).output;
}

void export_offsets(const Tensor& offsets, std::size_t index, const std::string& csv_path,
                    const std::string& heatmap_path) {
  if (offsets.rank() != 4 || offsets.dim(1) % 2 != 0 || index >= offsets.dim(0)) {
    throw ShapeError("export_offsets: bad offset field " + shape_str(offsets.shape()) +
                     " or batch index " + std::to_string(index));
  }
  const std::size_t taps = offsets.dim(1) / 2, h = offsets.dim(2), w = offsets.dim(3);
  const std::size_t hw = h * w;
  const double* f = offsets.data().data() + index * offsets.dim(1) * hw;

  std::ofstream os(csv_path);
  if (!os) throw IoError("cannot open for writing: " + csv_path);
  os << "y,x,tap,dy,dx\n";
  char buf[96];
  std::vector<double> magnitude(hw, 0.0);
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      const std::size_t p = y * w + x;
      for (std::size_t t = 0; t < taps; ++t) {
        const double dy = f[(2 * t) * hw + p];
        const double dx = f[(2 * t + 1) * hw + p];
        std::snprintf(buf, sizeof buf, "%zu,%zu,%zu,%.17g,%.17g\n", y, x, t, dy, dx);
        os << buf;
        magnitude[p] += std::sqrt(dy * dy + dx * dx) / static_cast<double>(taps);
      }
    }
  }
  if (!os) throw IoError("write failed: " + csv_path);
  if (heatmap_path.empty()) return;

  const auto [lo, hi] = std::minmax_element(magnitude.begin(), magnitude.end());
  const double range = *hi - *lo;
  std::vector<std::uint8_t> pixels(hw, 0);
  if (range > 0.0) {
    for (std::size_t p = 0; p < hw; ++p) {
      pixels[p] = static_cast<std::uint8_t>(std::lround(255.0 * (magnitude[p] - *lo) / range));
    }
  }
  write_pgm(heatmap_path, w, h, pixels);
}

Tensor read_offsets_csv(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open for reading: " + path);
  std::string line;
  std::getline(is, line);
  if (line != "y,x,tap,dy,dx") throw FormatError(path + ": unexpected offset CSV header");
  struct Row {
    std::size_t y, x, t;
    double dy, dx;
  };
  std::vector<Row> rows;
  std::size_t h = 0, w = 0, taps = 0;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    Row r{};
    std::stringstream ss(line);
    std::string field;
    std::vector<std::string> fields;
    while (std::getline(ss, field, ',')) fields.push_back(field);
    if (fields.size() != 5) throw FormatError(path + ": malformed row '" + line + "'");
    r.y = std::stoul(fields[0]);
    r.x = std::stoul(fields[1]);
    r.t = std::stoul(fields[2]);
    r.dy = std::stod(fields[3]);
    r.dx = std::stod(fields[4]);
    h = std::max(h, r.y + 1);
    w = std::max(w, r.x + 1);
    taps = std::max(taps, r.t + 1);
    rows.push_back(r);
  }
  if (rows.size() != h * w * taps || rows.empty()) {
    throw FormatError(path + ": offset CSV does not cover a full grid");
  }
  Tensor field = Tensor::zeros({1, 2 * taps, h, w});
  auto d = field.mutable_data();
  for (const Row& r : rows) {
    d[(2 * r.t) * h * w + r.y * w + r.x] = r.dy;
    d[(2 * r.t + 1) * h * w + r.y * w + r.x] = r.dx;
  }
  return field;
}

}  // namespace daunet
