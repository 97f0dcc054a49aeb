#include <cmath>

#include "yynet/simd/kernels.hpp"

namespace yynet::simd::detail {
namespace {

template <class T>
void gemm(std::size_t m, std::size_t n, std::size_t k, const T* a, std::size_t lda, const T* b,
          std::size_t ldb, T* c, std::size_t ldc, bool accumulate) {
  for (std::size_t i = 0; i < m; ++i) {
    T* crow = c + i * ldc;
    if (!accumulate) {
      for (std::size_t j = 0; j < n; ++j) crow[j] = T(0);
    }
    for (std::size_t p = 0; p < k; ++p) {
      const T av = a[i * lda + p];
      const T* brow = b + p * ldb;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

template <class T>
void add(std::size_t n, const T* a, const T* b, T* out) {
  for (std::size_t i = 0; i < n; ++i) out[i] = a[i] + b[i];
}

template <class T>
void sub(std::size_t n, const T* a, const T* b, T* out) {
  for (std::size_t i = 0; i < n; ++i) out[i] = a[i] - b[i];
}

template <class T>
void mul(std::size_t n, const T* a, const T* b, T* out) {
  for (std::size_t i = 0; i < n; ++i) out[i] = a[i] * b[i];
}

template <class T>
void mul_acc(std::size_t n, const T* a, const T* b, T* out) {
  for (std::size_t i = 0; i < n; ++i) out[i] += a[i] * b[i];
}

template <class T>
void axpy(std::size_t n, T alpha, const T* x, T* y) {
  for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

template <class T>
void affine(std::size_t n, T alpha, T beta, const T* x, T* out) {
  for (std::size_t i = 0; i < n; ++i) out[i] = alpha * x[i] + beta;
}

template <class T>
T dot(std::size_t n, const T* x, const T* y) {
  T acc = 0;
  for (std::size_t i = 0; i < n; ++i) acc += x[i] * y[i];
  return acc;
}

template <class T>
T sum(std::size_t n, const T* x) {
  T acc = 0;
  for (std::size_t i = 0; i < n; ++i) acc += x[i];
  return acc;
}

template <class T>
void gelu(std::size_t n, const T* x, T* out) {
  constexpr T kInvSqrt2 = T(0.70710678118654752440);
  for (std::size_t i = 0; i < n; ++i) {
    const T v = x[i];
    out[i] = T(0.5) * v * (T(1) + std::erf(v * kInvSqrt2));
  }
}

template <class T>
void gelu_backward(std::size_t n, const T* x, const T* grad_out, T* grad_in) {
  constexpr T kInvSqrt2 = T(0.70710678118654752440);
  constexpr T kInvSqrt2Pi = T(0.39894228040143267794);
  for (std::size_t i = 0; i < n; ++i) {
    const T v = x[i];
    const T cdf = T(0.5) * (T(1) + std::erf(v * kInvSqrt2));
    const T pdf = kInvSqrt2Pi * std::exp(T(-0.5) * v * v);
    grad_in[i] += grad_out[i] * (cdf + v * pdf);
  }
}

template <class T>
constexpr KernelTable<T> make_table() {
  return KernelTable<T>{"scalar", &gemm<T>,     &add<T>, &sub<T>, &mul<T>,  &mul_acc<T>,
                        &axpy<T>, &affine<T>,   &dot<T>, &sum<T>, &gelu<T>, &gelu_backward<T>};
}

constexpr KernelTable<float> kScalarF = make_table<float>();
constexpr KernelTable<double> kScalarD = make_table<double>();

}  // namespace

template <>
const KernelTable<float>& scalar_table<float>() {
  return kScalarF;
}
template <>
const KernelTable<double>& scalar_table<double>() {
  return kScalarD;
}

}  // namespace yynet::simd::detail
