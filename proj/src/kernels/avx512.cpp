#include <immintrin.h>

#include "variants.hpp"

namespace daunet::kernels::avx512 {
namespace {

constexpr std::size_t kMr = 8;
constexpr std::size_t kNr = 16;

// 8 x 16 register tile: two zmm columns per row, sixteen accumulators.
void micro_kernel(std::size_t kc, const double* pa, const double* pb, std::size_t ldb,
                  double* c, std::size_t ldc, bool overwrite) {
  __m512d acc[kMr][2];
  for (std::size_t i = 0; i < kMr; ++i) {
    acc[i][0] = _mm512_setzero_pd();
    acc[i][1] = _mm512_setzero_pd();
  }
  for (std::size_t p = 0; p < kc; ++p) {
    const __m512d b0 = _mm512_loadu_pd(pb);
    const __m512d b1 = _mm512_loadu_pd(pb + 8);
#pragma GCC unroll 8
    for (std::size_t i = 0; i < kMr; ++i) {
      const __m512d a = _mm512_set1_pd(pa[i]);
      acc[i][0] = _mm512_fmadd_pd(a, b0, acc[i][0]);
      acc[i][1] = _mm512_fmadd_pd(a, b1, acc[i][1]);
    }
    pa += kMr;
    pb += ldb;
  }
#pragma GCC unroll 8
  for (std::size_t i = 0; i < kMr; ++i) {
    double* row = c + i * ldc;
    __m512d v0 = acc[i][0];
    __m512d v1 = acc[i][1];
    if (!overwrite) {
      v0 = _mm512_add_pd(v0, _mm512_loadu_pd(row));
      v1 = _mm512_add_pd(v1, _mm512_loadu_pd(row + 8));
    }
    _mm512_storeu_pd(row, v0);
    _mm512_storeu_pd(row + 8, v1);
  }
}

#include "gemm_driver.inc"

double dot_impl(const double* x, const double* y, std::size_t n) {
  __m512d s0 = _mm512_setzero_pd();
  __m512d s1 = _mm512_setzero_pd();
  std::size_t i = 0;
  for (; i + 16 <= n; i += 16) {
    s0 = _mm512_fmadd_pd(_mm512_loadu_pd(x + i), _mm512_loadu_pd(y + i), s0);
    s1 = _mm512_fmadd_pd(_mm512_loadu_pd(x + i + 8), _mm512_loadu_pd(y + i + 8), s1);
  }
  double s = _mm512_reduce_add_pd(_mm512_add_pd(s0, s1));
  for (; i < n; ++i) s += x[i] * y[i];
  return s;
}

void axpy_impl(double alpha, const double* x, double* y, std::size_t n) {
  const __m512d va = _mm512_set1_pd(alpha);
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    _mm512_storeu_pd(y + i, _mm512_fmadd_pd(va, _mm512_loadu_pd(x + i), _mm512_loadu_pd(y + i)));
  }
  for (; i < n; ++i) y[i] += alpha * x[i];
}

}  // namespace

const VariantTable& table() {
  static const VariantTable t{&gemm_blocked, &dot_impl, &axpy_impl};
  return t;
}

}  // namespace daunet::kernels::avx512
