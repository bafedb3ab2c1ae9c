#include "variants.hpp"

namespace daunet::kernels::scalar {
namespace {

constexpr std::size_t kMr = 4;
constexpr std::size_t kNr = 8;

void micro_kernel(std::size_t kc, const double* pa, const double* pb, std::size_t ldb,
                  double* c, std::size_t ldc, bool overwrite) {
  double acc[kMr][kNr] = {};
  for (std::size_t p = 0; p < kc; ++p) {
    for (std::size_t i = 0; i < kMr; ++i) {
      const double a = pa[i];
      for (std::size_t j = 0; j < kNr; ++j) acc[i][j] += a * pb[j];
    }
    pa += kMr;
    pb += ldb;
  }
  for (std::size_t i = 0; i < kMr; ++i) {
    double* row = c + i * ldc;
    for (std::size_t j = 0; j < kNr; ++j) row[j] = overwrite ? acc[i][j] : row[j] + acc[i][j];
  }
}

#include "gemm_driver.inc"

double dot_impl(const double* x, const double* y, std::size_t n) {
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += x[i] * y[i];
  return s;
}

void axpy_impl(double alpha, const double* x, double* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

}  // namespace

const VariantTable& table() {
  static const VariantTable t{&gemm_blocked, &dot_impl, &axpy_impl};
  return t;
}

}  // namespace daunet::kernels::scalar
