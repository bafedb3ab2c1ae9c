#pragma once

// Internal interface between the dispatcher and the per-ISA translation
// units. Variant TUs are compiled with ISA-specific flags and must include
// only C headers plus this file.

#include <cstddef>

#include "daunet/kernels.hpp"

namespace daunet::kernels {

inline constexpr std::size_t kGemmKc = 256;
inline constexpr std::size_t kGemmMc = 96;
inline constexpr std::size_t kGemmNc = 4080;
inline constexpr std::size_t kWorkA = kGemmMc * kGemmKc;
inline constexpr std::size_t kWorkB = kGemmKc * kGemmNc;

struct VariantTable {
  void (*gemm)(const GemmArgs& args, double* work_a, double* work_b);
  double (*dot)(const double* x, const double* y, std::size_t n);
  void (*axpy)(double alpha, const double* x, double* y, std::size_t n);
};

namespace scalar { const VariantTable& table(); }
namespace avx2 { const VariantTable& table(); }
namespace avx512 { const VariantTable& table(); }

}  // namespace daunet::kernels
