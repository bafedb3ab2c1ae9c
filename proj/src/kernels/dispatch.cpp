#include <atomic>
#include <stdexcept>
#include <string>
#include <vector>

#include "daunet/kernels.hpp"
#include "variants.hpp"

namespace daunet::kernels {
namespace {

Isa detect_best() {
#if defined(__x86_64__) || defined(__i386__)
  __builtin_cpu_init();
  if (__builtin_cpu_supports("avx512f")) return Isa::kAvx512;
  if (__builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma")) return Isa::kAvx2;
#endif
  return Isa::kScalar;
}

std::atomic<int>& selected() {
  static std::atomic<int> isa{static_cast<int>(detect_best())};
  return isa;
}

const VariantTable& table_for(Isa isa) {
  switch (isa) {
    case Isa::kAvx512:
      return avx512::table();
    case Isa::kAvx2:
      return avx2::table();
    case Isa::kScalar:
      break;
  }
  return scalar::table();
}

struct Workspace {
  std::vector<double> a = std::vector<double>(kWorkA);
  std::vector<double> b = std::vector<double>(kWorkB);
};

Workspace& workspace() {
  thread_local Workspace ws;
  return ws;
}

}  // namespace

std::string_view isa_name(Isa isa) {
  switch (isa) {
    case Isa::kAvx512:
      return "avx512";
    case Isa::kAvx2:
      return "avx2";
    case Isa::kScalar:
      break;
  }
  return "scalar";
}

bool isa_supported(Isa isa) {
#if defined(__x86_64__) || defined(__i386__)
  __builtin_cpu_init();
  switch (isa) {
    case Isa::kAvx512:
      return __builtin_cpu_supports("avx512f");
    case Isa::kAvx2:
      return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
    case Isa::kScalar:
      return true;
  }
  return false;
#else
  return isa == Isa::kScalar;
#endif
}

Isa active_isa() { return static_cast<Isa>(selected().load(std::memory_order_relaxed)); }

void set_active_isa(Isa isa) {
  if (!isa_supported(isa)) {
    throw std::invalid_argument("kernel variant not supported on this CPU: " +
                                std::string(isa_name(isa)));
  }
  selected().store(static_cast<int>(isa), std::memory_order_relaxed);
}

void gemm(Isa isa, const GemmArgs& args) {
  if (!isa_supported(isa)) {
    throw std::invalid_argument("kernel variant not supported on this CPU: " +
                                std::string(isa_name(isa)));
  }
  Workspace& ws = workspace();
  table_for(isa).gemm(args, ws.a.data(), ws.b.data());
}

double dot(Isa isa, const double* x, const double* y, std::size_t n) {
  return table_for(isa).dot(x, y, n);
}

void axpy(Isa isa, double alpha, const double* x, double* y, std::size_t n) {
  table_for(isa).axpy(alpha, x, y, n);
}

void gemm(const GemmArgs& args) {
  Workspace& ws = workspace();
  table_for(active_isa()).gemm(args, ws.a.data(), ws.b.data());
}

double dot(const double* x, const double* y, std::size_t n) {
  return table_for(active_isa()).dot(x, y, n);
}

void axpy(double alpha, const double* x, double* y, std::size_t n) {
  table_for(active_isa()).axpy(alpha, x, y, n);
}

}  // namespace daunet::kernels
