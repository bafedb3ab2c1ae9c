#pragma once

#include <cstddef>
#include <string_view>

// Dense double-precision inner loops behind every convolution, with one
// scalar reference implementation and SIMD variants chosen at runtime.
namespace daunet::kernels {

enum class Isa { kScalar, kAvx2, kAvx512 };

std::string_view isa_name(Isa isa);
bool isa_supported(Isa isa);

// Best variant the running CPU supports. Selected once on first use.
Isa active_isa();

// Pins the variant used by the free functions below. Throws
// std::invalid_argument when the CPU cannot run it.
void set_active_isa(Isa isa);

// C[m x n] (+)= op(A)[m x k] * op(B)[k x n], all row-major. op(X) is X or
// X^T according to the trans flag; lda/ldb are the leading dimensions of the
// stored (untransposed) arrays. With accumulate == false C is overwritten.
struct GemmArgs {
  bool trans_a = false;
  bool trans_b = false;
  std::size_t m = 0;
  std::size_t n = 0;
  std::size_t k = 0;
  const double* a = nullptr;
  std::size_t lda = 0;
  const double* b = nullptr;
  std::size_t ldb = 0;
  double* c = nullptr;
  std::size_t ldc = 0;
  bool accumulate = false;
};

void gemm(const GemmArgs& args);
double dot(const double* x, const double* y, std::size_t n);
// y += alpha * x
void axpy(double alpha, const double* x, double* y, std::size_t n);

// Explicit-variant entry points, used by the equivalence tests.
void gemm(Isa isa, const GemmArgs& args);
double dot(Isa isa, const double* x, const double* y, std::size_t n);
void axpy(Isa isa, double alpha, const double* x, double* y, std::size_t n);

}  // namespace daunet::kernels
