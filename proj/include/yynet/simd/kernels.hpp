#pragma once

// Data-parallel inner loops used by the tensor ops.
//
// Every kernel exists as a portable scalar reference and, on x86-64, as an
// AVX2+FMA variant. The variant is picked once at startup from CPUID and can
// be overridden with YYNET_ISA=scalar|avx2 or set_isa(). The two variants are
// not bitwise identical (FMA contraction, reduction order); tests bound the
// difference.

#include <cstddef>
#include <string_view>

namespace yynet::simd {

enum class Isa { kScalar, kAvx2 };

template <class T>
struct KernelTable {
  const char* name;

  // c[m,n] = a[m,k] * b[k,n]   (or += when accumulate), row-major with leading dims.
  void (*gemm)(std::size_t m, std::size_t n, std::size_t k, const T* a, std::size_t lda,
               const T* b, std::size_t ldb, T* c, std::size_t ldc, bool accumulate);

  void (*add)(std::size_t n, const T* a, const T* b, T* out);
  void (*sub)(std::size_t n, const T* a, const T* b, T* out);
  void (*mul)(std::size_t n, const T* a, const T* b, T* out);
  // out += a * b
  void (*mul_acc)(std::size_t n, const T* a, const T* b, T* out);
  // y += alpha * x
  void (*axpy)(std::size_t n, T alpha, const T* x, T* y);
  // out = alpha * x + beta
  void (*affine)(std::size_t n, T alpha, T beta, const T* x, T* out);
  T (*dot)(std::size_t n, const T* x, const T* y);
  T (*sum)(std::size_t n, const T* x);

  // out = x * Phi(x) with Phi the standard normal CDF.
  void (*gelu)(std::size_t n, const T* x, T* out);
  // grad_in += grad_out * (Phi(x) + x * phi(x))
  void (*gelu_backward)(std::size_t n, const T* x, const T* grad_out, T* grad_in);
};

bool isa_supported(Isa isa);
Isa detect_isa();
Isa active_isa();
/// Throws StateError if the ISA is not available on this CPU or build.
void set_isa(Isa isa);
std::string_view isa_name(Isa isa);

template <class T>
const KernelTable<T>& kernels_for(Isa isa);

template <class T>
const KernelTable<T>& kernels() {
  return kernels_for<T>(active_isa());
}

namespace detail {
template <class T>
const KernelTable<T>& scalar_table();
#if defined(YYNET_HAVE_AVX2)
template <class T>
const KernelTable<T>& avx2_table();
#endif
}  // namespace detail

}  // namespace yynet::simd
