#include <atomic>
#include <cstdlib>
#include <string>

#include "yynet/errors.hpp"
#include "yynet/simd/kernels.hpp"

namespace yynet::simd {
namespace {

constexpr int kUnset = -1;
std::atomic<int> g_active{kUnset};

Isa initial_isa() {
  if (const char* env = std::getenv("YYNET_ISA")) {
    const std::string want(env);
    if (want == "scalar") return Isa::kScalar;
    if (want == "avx2" && isa_supported(Isa::kAvx2)) return Isa::kAvx2;
  }
  return detect_isa();
}

}  // namespace

bool isa_supported(Isa isa) {
  switch (isa) {
    case Isa::kScalar:
      return true;
    case Isa::kAvx2:
#if defined(YYNET_HAVE_AVX2)
      return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
      return false;
#endif
  }
  return false;
}

Isa detect_isa() { return isa_supported(Isa::kAvx2) ? Isa::kAvx2 : Isa::kScalar; }

Isa active_isa() {
  int v = g_active.load(std::memory_order_acquire);
  if (v == kUnset) {
    int expected = kUnset;
    g_active.compare_exchange_strong(expected, static_cast<int>(initial_isa()));
    v = g_active.load(std::memory_order_acquire);
  }
  return static_cast<Isa>(v);
}

void set_isa(Isa isa) {
  if (!isa_supported(isa)) {
    throw StateError("ISA '" + std::string(isa_name(isa)) + "' is not available on this machine");
  }
  g_active.store(static_cast<int>(isa), std::memory_order_release);
}

std::string_view isa_name(Isa isa) { return isa == Isa::kAvx2 ? "avx2" : "scalar"; }

template <class T>
const KernelTable<T>& kernels_for(Isa isa) {
#if defined(YYNET_HAVE_AVX2)
  if (isa == Isa::kAvx2) return detail::avx2_table<T>();
#else
  (void)isa;
#endif
  return detail::scalar_table<T>();
}

template const KernelTable<float>& kernels_for<float>(Isa);
template const KernelTable<double>& kernels_for<double>(Isa);

}  // namespace yynet::simd
