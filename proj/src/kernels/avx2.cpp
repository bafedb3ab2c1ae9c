#include <immintrin.h>

#include "variants.hpp"

namespace daunet::kernels::avx2 {
namespace {

constexpr std::size_t kMr = 4;
constexpr std::size_t kNr = 12;

// 4 x 12 register tile: three ymm columns per row, twelve accumulators.
void micro_kernel(std::size_t kc, const double* pa, const double* pb, std::size_t ldb,
                  double* c, std::size_t ldc, bool overwrite) {
  __m256d c00 = _mm256_setzero_pd(), c01 = _mm256_setzero_pd(), c02 = _mm256_setzero_pd();
  __m256d c10 = _mm256_setzero_pd(), c11 = _mm256_setzero_pd(), c12 = _mm256_setzero_pd();
  __m256d c20 = _mm256_setzero_pd(), c21 = _mm256_setzero_pd(), c22 = _mm256_setzero_pd();
  __m256d c30 = _mm256_setzero_pd(), c31 = _mm256_setzero_pd(), c32 = _mm256_setzero_pd();
  for (std::size_t p = 0; p < kc; ++p) {
    const __m256d b0 = _mm256_loadu_pd(pb);
    const __m256d b1 = _mm256_loadu_pd(pb + 4);
    const __m256d b2 = _mm256_loadu_pd(pb + 8);
    __m256d a = _mm256_broadcast_sd(pa);
    c00 = _mm256_fmadd_pd(a, b0, c00);
    c01 = _mm256_fmadd_pd(a, b1, c01);
    c02 = _mm256_fmadd_pd(a, b2, c02);
    a = _mm256_broadcast_sd(pa + 1);
    c10 = _mm256_fmadd_pd(a, b0, c10);
    c11 = _mm256_fmadd_pd(a, b1, c11);
    c12 = _mm256_fmadd_pd(a, b2, c12);
    a = _mm256_broadcast_sd(pa + 2);
    c20 = _mm256_fmadd_pd(a, b0, c20);
    c21 = _mm256_fmadd_pd(a, b1, c21);
    c22 = _mm256_fmadd_pd(a, b2, c22);
    a = _mm256_broadcast_sd(pa + 3);
    c30 = _mm256_fmadd_pd(a, b0, c30);
    c31 = _mm256_fmadd_pd(a, b1, c31);
    c32 = _mm256_fmadd_pd(a, b2, c32);
    pa += kMr;
    pb += ldb;
  }
  auto store = [overwrite](double* dst, __m256d v) {
    if (!overwrite) v = _mm256_add_pd(v, _mm256_loadu_pd(dst));
    _mm256_storeu_pd(dst, v);
  };
  store(c, c00);
  store(c + 4, c01);
  store(c + 8, c02);
  c += ldc;
  store(c, c10);
  store(c + 4, c11);
  store(c + 8, c12);
  c += ldc;
  store(c, c20);
  store(c + 4, c21);
  store(c + 8, c22);
  c += ldc;
  store(c, c30);
  store(c + 4, c31);
  store(c + 8, c32);
}

#include "gemm_driver.inc"

double dot_impl(const double* x, const double* y, std::size_t n) {
  __m256d s0 = _mm256_setzero_pd();
  __m256d s1 = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    s0 = _mm256_fmadd_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i), s0);
    s1 = _mm256_fmadd_pd(_mm256_loadu_pd(x + i + 4), _mm256_loadu_pd(y + i + 4), s1);
  }
  double lanes[4];
  _mm256_storeu_pd(lanes, _mm256_add_pd(s0, s1));
  double s = (lanes[0] + lanes[1]) + (lanes[2] + lanes[3]);
  for (; i < n; ++i) s += x[i] * y[i];
  return s;
}

void axpy_impl(double alpha, const double* x, double* y, std::size_t n) {
  const __m256d va = _mm256_set1_pd(alpha);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    _mm256_storeu_pd(y + i, _mm256_fmadd_pd(va, _mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i)));
  }
  for (; i < n; ++i) y[i] += alpha * x[i];
}

}  // namespace

const VariantTable& table() {
  static const VariantTable t{&gemm_blocked, &dot_impl, &axpy_impl};
  return t;
}

}  // namespace daunet::kernels::avx2
