#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "daunet/error.hpp"
#include "daunet/kernels.hpp"
#include "daunet/ops.hpp"

namespace daunet {
namespace {

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shapes " + shape_str(a.shape()) + " and " +
                     shape_str(b.shape()) + " differ");
  }
}

double stable_sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

void accumulate(Tensor& t, std::span<const double> g) {
  if (!t.requires_grad()) return;
  kernels::axpy(1.0, g.data(), t.grad_accumulator().data(), g.size());
}

}  // namespace

Tensor relu(const Tensor& input) {
  auto x = input.data();
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] > 0.0 ? x[i] : 0.0;
  return Tensor::make_result(input.shape(), std::move(out), "relu", {input},
                             [](std::span<const double> gout, std::span<Tensor> in) {
                               auto x = in[0].data();
                               auto gx = in[0].grad_accumulator();
                               for (std::size_t i = 0; i < x.size(); ++i) {
                                 if (x[i] > 0.0) gx[i] += gout[i];
                               }
                             });
}

Tensor sigmoid(const Tensor& input) {
  auto x = input.data();
  auto y = std::make_shared<std::vector<double>>(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) (*y)[i] = stable_sigmoid(x[i]);
  std::vector<double> out = *y;
  return Tensor::make_result(input.shape(), std::move(out), "sigmoid", {input},
                             [y](std::span<const double> gout, std::span<Tensor> in) {
                               auto gx = in[0].grad_accumulator();
                               for (std::size_t i = 0; i < gout.size(); ++i) {
                                 const double s = (*y)[i];
                                 gx[i] += gout[i] * s * (1.0 - s);
                               }
                             });
}

Tensor reciprocal(const Tensor& input) {
  auto x = input.data();
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = 1.0 / x[i];
  return Tensor::make_result(input.shape(), std::move(out), "reciprocal", {input},
                             [](std::span<const double> gout, std::span<Tensor> in) {
                               auto x = in[0].data();
                               auto gx = in[0].grad_accumulator();
                               for (std::size_t i = 0; i < x.size(); ++i) {
                                 gx[i] -= gout[i] / (x[i] * x[i]);
                               }
                             });
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  auto x = a.data();
  auto y = b.data();
  std::vector<double> out(x.begin(), x.end());
  kernels::axpy(1.0, y.data(), out.data(), out.size());
  return Tensor::make_result(a.shape(), std::move(out), "add", {a, b},
                             [](std::span<const double> gout, std::span<Tensor> in) {
                               accumulate(in[0], gout);
                               accumulate(in[1], gout);
                             });
}

Tensor add_scalar(const Tensor& a, double value) {
  auto x = a.data();
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] + value;
  return Tensor::make_result(a.shape(), std::move(out), "add_scalar", {a},
                             [](std::span<const double> gout, std::span<Tensor> in) {
                               accumulate(in[0], gout);
                             });
}

Tensor scale(const Tensor& a, double factor) {
  auto x = a.data();
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] * factor;
  return Tensor::make_result(a.shape(), std::move(out), "scale", {a},
                             [factor](std::span<const double> gout, std::span<Tensor> in) {
                               if (!in[0].requires_grad()) return;
                               kernels::axpy(factor, gout.data(), in[0].grad_accumulator().data(),
                                             gout.size());
                             });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  const bool broadcast = sa != sb;
  if (broadcast && !(sa.size() == 4 && sb.size() == 4 && sb[1] == 1 && sa[0] == sb[0] &&
                     sa[2] == sb[2] && sa[3] == sb[3])) {
    throw ShapeError("mul: shape " + shape_str(sb) + " is neither equal to nor channel-" +
                     "broadcastable onto " + shape_str(sa));
  }
  auto x = a.data();
  auto y = b.data();
  std::vector<double> out(x.size());
  const std::size_t c = broadcast ? sa[1] : 1;
  const std::size_t hw = broadcast ? sa[2] * sa[3] : x.size();
  const std::size_t n = broadcast ? sa[0] : 1;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t ci = 0; ci < c; ++ci) {
      const double* xa = x.data() + (i * c + ci) * hw;
      const double* yb = y.data() + i * hw + (broadcast ? 0 : ci * hw);
      double* o = out.data() + (i * c + ci) * hw;
      for (std::size_t p = 0; p < hw; ++p) o[p] = xa[p] * yb[p];
    }
  }
  return Tensor::make_result(
      sa, std::move(out), "mul", {a, b},
      [n, c, hw, broadcast](std::span<const double> gout, std::span<Tensor> in) {
        auto x = in[0].data();
        auto y = in[1].data();
        std::span<double> gx = in[0].requires_grad() ? in[0].grad_accumulator() : std::span<double>();
        std::span<double> gy = in[1].requires_grad() ? in[1].grad_accumulator() : std::span<double>();
        for (std::size_t i = 0; i < n; ++i) {
          for (std::size_t ci = 0; ci < c; ++ci) {
            const std::size_t xo = (i * c + ci) * hw;
            const std::size_t yo = i * hw + (broadcast ? 0 : ci * hw);
            for (std::size_t p = 0; p < hw; ++p) {
              if (!gx.empty()) gx[xo + p] += gout[xo + p] * y[yo + p];
              if (!gy.empty()) gy[yo + p] += gout[xo + p] * x[xo + p];
            }
          }
        }
      });
}

Tensor sum(const Tensor& a) {
  auto x = a.data();
  double s = 0.0;
  for (double v : x) s += v;
  return Tensor::make_result({1}, {s}, "sum", {a},
                             [](std::span<const double> gout, std::span<Tensor> in) {
                               auto gx = in[0].grad_accumulator();
                               for (double& g : gx) g += gout[0];
                             });
}

Tensor mean(const Tensor& a) { return scale(sum(a), 1.0 / static_cast<double>(a.numel())); }

Tensor concat_channels(const Tensor& a, const Tensor& b) {
  if (a.rank() != 4 || b.rank() != 4) throw ShapeError("concat_channels: rank-4 inputs required");
  const char* names[] = {"N", "C", "H", "W"};
  for (std::size_t d : {0u, 2u, 3u}) {
    if (a.dim(d) != b.dim(d)) {
      throw ShapeError(std::string("concat_channels: dimension ") + names[d] + " differs (" +
                       std::to_string(a.dim(d)) + " vs " + std::to_string(b.dim(d)) + ")");
    }
  }
  const std::size_t n = a.dim(0), ca = a.dim(1), cb = b.dim(1), hw = a.dim(2) * a.dim(3);
  std::vector<double> out(n * (ca + cb) * hw);
  auto x = a.data();
  auto y = b.data();
  for (std::size_t i = 0; i < n; ++i) {
    std::memcpy(out.data() + i * (ca + cb) * hw, x.data() + i * ca * hw, ca * hw * sizeof(double));
    std::memcpy(out.data() + (i * (ca + cb) + ca) * hw, y.data() + i * cb * hw,
                cb * hw * sizeof(double));
  }
  return Tensor::make_result(
      {n, ca + cb, a.dim(2), a.dim(3)}, std::move(out), "concat_channels", {a, b},
      [n, ca, cb, hw](std::span<const double> gout, std::span<Tensor> in) {
        for (std::size_t i = 0; i < n; ++i) {
          if (in[0].requires_grad()) {
            kernels::axpy(1.0, gout.data() + i * (ca + cb) * hw,
                          in[0].grad_accumulator().data() + i * ca * hw, ca * hw);
          }
          if (in[1].requires_grad()) {
            kernels::axpy(1.0, gout.data() + (i * (ca + cb) + ca) * hw,
                          in[1].grad_accumulator().data() + i * cb * hw, cb * hw);
          }
        }
      });
}

Tensor slice_channels(const Tensor& input, std::size_t begin, std::size_t count) {
  if (input.rank() != 4) throw ShapeError("slice_channels: rank-4 input required");
  const std::size_t n = input.dim(0), c = input.dim(1), hw = input.dim(2) * input.dim(3);
  if (count == 0 || begin + count > c) {
    throw ShapeError("slice_channels: range [" + std::to_string(begin) + ", " +
                     std::to_string(begin + count) + ") outside C=" + std::to_string(c));
  }
  std::vector<double> out(n * count * hw);
  auto x = input.data();
  for (std::size_t i = 0; i < n; ++i) {
    std::memcpy(out.data() + i * count * hw, x.data() + (i * c + begin) * hw,
                count * hw * sizeof(double));
  }
  return Tensor::make_result({n, count, input.dim(2), input.dim(3)}, std::move(out),
                             "slice_channels", {input},
                             [n, c, hw, begin, count](std::span<const double> gout,
                                                      std::span<Tensor> in) {
                               auto gx = in[0].grad_accumulator();
                               for (std::size_t i = 0; i < n; ++i) {
                                 kernels::axpy(1.0, gout.data() + i * count * hw,
                                               gx.data() + (i * c + begin) * hw, count * hw);
                               }
                             });
}

void write_tensor_csv(const Tensor& t, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot open for writing: " + path);
  os << "dims=";
  for (std::size_t i = 0; i < t.rank(); ++i) os << (i ? "," : "") << t.dim(i);
  os << '\n';
  char buf[32];
  for (double v : t.data()) {
    std::snprintf(buf, sizeof buf, "%.17g", v);
    os << buf << '\n';
  }
  if (!os) throw IoError("write failed: " + path);
}

Tensor read_tensor_csv(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open for reading: " + path);
  std::string header;
  std::getline(is, header);
  if (header.rfind("dims=", 0) != 0) throw FormatError(path + ": missing dims= header");
  Shape shape;
  std::stringstream ss(header.substr(5));
  std::string item;
  while (std::getline(ss, item, ',')) shape.push_back(std::stoul(item));
  std::vector<double> values;
  values.reserve(numel(shape));
  std::string line;
  while (std::getline(is, line)) {
    if (!line.empty()) values.push_back(std::stod(line));
  }
  if (values.size() != numel(shape)) {
    throw FormatError(path + ": expected " + std::to_string(numel(shape)) + " values, got " +
                      std::to_string(values.size()));
  }
  return Tensor::from_data(shape, std::move(values));
}

}  // namespace daunet
