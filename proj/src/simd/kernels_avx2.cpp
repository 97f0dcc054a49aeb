// AVX2 + FMA kernels. This translation unit is the only one compiled with
// -mavx2 -mfma; it must not pull in STL templates that could leak AVX2 code
// into the rest of the program through ODR merging.

#include <immintrin.h>

#include <cmath>
#include <cstddef>

#include "yynet/simd/kernels.hpp"

namespace yynet::simd::detail {
namespace {

template <class T>
struct Vec;

template <>
struct Vec<float> {
  using Reg = __m256;
  static constexpr std::size_t kWidth = 8;
  static Reg load(const float* p) { return _mm256_loadu_ps(p); }
  static void store(float* p, Reg v) { _mm256_storeu_ps(p, v); }
  static Reg set1(float v) { return _mm256_set1_ps(v); }
  static Reg zero() { return _mm256_setzero_ps(); }
  static Reg add(Reg a, Reg b) { return _mm256_add_ps(a, b); }
  static Reg sub(Reg a, Reg b) { return _mm256_sub_ps(a, b); }
  static Reg mul(Reg a, Reg b) { return _mm256_mul_ps(a, b); }
  static Reg fmadd(Reg a, Reg b, Reg c) { return _mm256_fmadd_ps(a, b, c); }
  static float hsum(Reg v) {
    __m128 lo = _mm256_castps256_ps128(v);
    __m128 hi = _mm256_extractf128_ps(v, 1);
    lo = _mm_add_ps(lo, hi);
    __m128 shuf = _mm_movehdup_ps(lo);
    __m128 sums = _mm_add_ps(lo, shuf);
    shuf = _mm_movehl_ps(shuf, sums);
    sums = _mm_add_ss(sums, shuf);
    return _mm_cvtss_f32(sums);
  }
};

template <>
struct Vec<double> {
  using Reg = __m256d;
  static constexpr std::size_t kWidth = 4;
  static Reg load(const double* p) { return _mm256_loadu_pd(p); }
  static void store(double* p, Reg v) { _mm256_storeu_pd(p, v); }
  static Reg set1(double v) { return _mm256_set1_pd(v); }
  static Reg zero() { return _mm256_setzero_pd(); }
  static Reg add(Reg a, Reg b) { return _mm256_add_pd(a, b); }
  static Reg sub(Reg a, Reg b) { return _mm256_sub_pd(a, b); }
  static Reg mul(Reg a, Reg b) { return _mm256_mul_pd(a, b); }
  static Reg fmadd(Reg a, Reg b, Reg c) { return _mm256_fmadd_pd(a, b, c); }
  static double hsum(Reg v) {
    __m128d lo = _mm256_castpd256_pd128(v);
    __m128d hi = _mm256_extractf128_pd(v, 1);
    lo = _mm_add_pd(lo, hi);
    __m128d high64 = _mm_unpackhi_pd(lo, lo);
    return _mm_cvtsd_f64(_mm_add_sd(lo, high64));
  }
};

// ---------------------------------------------------------------------------
// GEMM: register-blocked MR x (NV * width) micro-kernel, K blocked to keep the
// B panel resident in cache.

template <class T, int MR, int NV>
inline void micro_kernel(std::size_t k, const T* a, std::size_t lda, const T* b, std::size_t ldb,
                         T* c, std::size_t ldc, bool accumulate) {
  using V = Vec<T>;
  constexpr std::size_t W = V::kWidth;
  typename V::Reg acc[MR][NV];
  for (int i = 0; i < MR; ++i) {
    for (int j = 0; j < NV; ++j) {
      acc[i][j] = accumulate ? V::load(c + i * ldc + j * W) : V::zero();
    }
  }
  for (std::size_t p = 0; p < k; ++p) {
    typename V::Reg bv[NV];
    for (int j = 0; j < NV; ++j) bv[j] = V::load(b + p * ldb + j * W);
    for (int i = 0; i < MR; ++i) {
      const typename V::Reg av = V::set1(a[i * lda + p]);
      for (int j = 0; j < NV; ++j) acc[i][j] = V::fmadd(av, bv[j], acc[i][j]);
    }
  }
  for (int i = 0; i < MR; ++i) {
    for (int j = 0; j < NV; ++j) V::store(c + i * ldc + j * W, acc[i][j]);
  }
}

template <class T, int NV>
inline void row_panel(std::size_t m, std::size_t k, const T* a, std::size_t lda, const T* b,
                      std::size_t ldb, T* c, std::size_t ldc, bool accumulate) {
  std::size_t i = 0;
  for (; i + 4 <= m; i += 4) {
    micro_kernel<T, 4, NV>(k, a + i * lda, lda, b, ldb, c + i * ldc, ldc, accumulate);
  }
  switch (m - i) {
    case 3:
      micro_kernel<T, 3, NV>(k, a + i * lda, lda, b, ldb, c + i * ldc, ldc, accumulate);
      break;
    case 2:
      micro_kernel<T, 2, NV>(k, a + i * lda, lda, b, ldb, c + i * ldc, ldc, accumulate);
      break;
    case 1:
      micro_kernel<T, 1, NV>(k, a + i * lda, lda, b, ldb, c + i * ldc, ldc, accumulate);
      break;
    default:
      break;
  }
}

template <class T>
void gemm(std::size_t m, std::size_t n, std::size_t k, const T* a, std::size_t lda, const T* b,
          std::size_t ldb, T* c, std::size_t ldc, bool accumulate) {
  constexpr std::size_t W = Vec<T>::kWidth;
  constexpr std::size_t kBlock = 256;
  if (k == 0) {
    if (!accumulate) {
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) c[i * ldc + j] = T(0);
    }
    return;
  }
  for (std::size_t kb = 0; kb < k; kb += kBlock) {
    const std::size_t kk = (k - kb < kBlock) ? k - kb : kBlock;
    const bool acc = accumulate || kb > 0;
    const T* ak = a + kb;
    const T* bk = b + kb * ldb;
    std::size_t j = 0;
    for (; j + 2 * W <= n; j += 2 * W) row_panel<T, 2>(m, kk, ak, lda, bk + j, ldb, c + j, ldc, acc);
    for (; j + W <= n; j += W) row_panel<T, 1>(m, kk, ak, lda, bk + j, ldb, c + j, ldc, acc);
    for (; j < n; ++j) {
      for (std::size_t i = 0; i < m; ++i) {
        T s = acc ? c[i * ldc + j] : T(0);
        for (std::size_t p = 0; p < kk; ++p) s += ak[i * lda + p] * bk[p * ldb + j];
        c[i * ldc + j] = s;
      }
    }
  }
}

// ---------------------------------------------------------------------------
// Elementwise and reductions.

template <class T>
void add(std::size_t n, const T* a, const T* b, T* out) {
  using V = Vec<T>;
  std::size_t i = 0;
  for (; i + V::kWidth <= n; i += V::kWidth) V::store(out + i, V::add(V::load(a + i), V::load(b + i)));
  for (; i < n; ++i) out[i] = a[i] + b[i];
}

template <class T>
void sub(std::size_t n, const T* a, const T* b, T* out) {
  using V = Vec<T>;
  std::size_t i = 0;
  for (; i + V::kWidth <= n; i += V::kWidth) V::store(out + i, V::sub(V::load(a + i), V::load(b + i)));
  for (; i < n; ++i) out[i] = a[i] - b[i];
}

template <class T>
void mul(std::size_t n, const T* a, const T* b, T* out) {
  using V = Vec<T>;
  std::size_t i = 0;
  for (; i + V::kWidth <= n; i += V::kWidth) V::store(out + i, V::mul(V::load(a + i), V::load(b + i)));
  for (; i < n; ++i) out[i] = a[i] * b[i];
}

template <class T>
void mul_acc(std::size_t n, const T* a, const T* b, T* out) {
  using V = Vec<T>;
  std::size_t i = 0;
  for (; i + V::kWidth <= n; i += V::kWidth) {
    V::store(out + i, V::fmadd(V::load(a + i), V::load(b + i), V::load(out + i)));
  }
  for (; i < n; ++i) out[i] += a[i] * b[i];
}

template <class T>
void axpy(std::size_t n, T alpha, const T* x, T* y) {
  using V = Vec<T>;
  const auto va = V::set1(alpha);
  std::size_t i = 0;
  for (; i + V::kWidth <= n; i += V::kWidth) V::store(y + i, V::fmadd(va, V::load(x + i), V::load(y + i)));
  for (; i < n; ++i) y[i] += alpha * x[i];
}

template <class T>
void affine(std::size_t n, T alpha, T beta, const T* x, T* out) {
  using V = Vec<T>;
  const auto va = V::set1(alpha);
  const auto vb = V::set1(beta);
  std::size_t i = 0;
  for (; i + V::kWidth <= n; i += V::kWidth) V::store(out + i, V::fmadd(va, V::load(x + i), vb));
  for (; i < n; ++i) out[i] = alpha * x[i] + beta;
}

template <class T>
T dot(std::size_t n, const T* x, const T* y) {
  using V = Vec<T>;
  constexpr std::size_t W = V::kWidth;
  auto acc0 = V::zero();
  auto acc1 = V::zero();
  std::size_t i = 0;
  for (; i + 2 * W <= n; i += 2 * W) {
    acc0 = V::fmadd(V::load(x + i), V::load(y + i), acc0);
    acc1 = V::fmadd(V::load(x + i + W), V::load(y + i + W), acc1);
  }
  for (; i + W <= n; i += W) acc0 = V::fmadd(V::load(x + i), V::load(y + i), acc0);
  T s = V::hsum(V::add(acc0, acc1));
  for (; i < n; ++i) s += x[i] * y[i];
  return s;
}

template <class T>
T sum(std::size_t n, const T* x) {
  using V = Vec<T>;
  constexpr std::size_t W = V::kWidth;
  auto acc0 = V::zero();
  auto acc1 = V::zero();
  std::size_t i = 0;
  for (; i + 2 * W <= n; i += 2 * W) {
    acc0 = V::add(acc0, V::load(x + i));
    acc1 = V::add(acc1, V::load(x + i + W));
  }
  for (; i + W <= n; i += W) acc0 = V::add(acc0, V::load(x + i));
  T s = V::hsum(V::add(acc0, acc1));
  for (; i < n; ++i) s += x[i];
  return s;
}

// ---------------------------------------------------------------------------
// GELU in single precision: erf via the Abramowitz-Stegun 7.1.26 rational
// form (|error| <= 1.5e-7) and a Cephes-style exp. Double precision keeps the
// libm erf so gradient checks see the reference function.

inline __m256 exp_ps(__m256 x) {
  const __m256 hi = _mm256_set1_ps(88.3762626647949f);
  const __m256 lo = _mm256_set1_ps(-88.3762626647949f);
  x = _mm256_max_ps(_mm256_min_ps(x, hi), lo);
  __m256 fx = _mm256_fmadd_ps(x, _mm256_set1_ps(1.44269504088896341f), _mm256_set1_ps(0.5f));
  fx = _mm256_floor_ps(fx);
  x = _mm256_fnmadd_ps(fx, _mm256_set1_ps(0.693359375f), x);
  x = _mm256_fnmadd_ps(fx, _mm256_set1_ps(-2.12194440e-4f), x);
  __m256 y = _mm256_set1_ps(1.9875691500e-4f);
  y = _mm256_fmadd_ps(y, x, _mm256_set1_ps(1.3981999507e-3f));
  y = _mm256_fmadd_ps(y, x, _mm256_set1_ps(8.3334519073e-3f));
  y = _mm256_fmadd_ps(y, x, _mm256_set1_ps(4.1665795894e-2f));
  y = _mm256_fmadd_ps(y, x, _mm256_set1_ps(1.6666665459e-1f));
  y = _mm256_fmadd_ps(y, x, _mm256_set1_ps(5.0000001201e-1f));
  const __m256 x2 = _mm256_mul_ps(x, x);
  y = _mm256_fmadd_ps(y, x2, _mm256_add_ps(x, _mm256_set1_ps(1.0f)));
  __m256i pow2 = _mm256_cvttps_epi32(fx);
  pow2 = _mm256_add_epi32(pow2, _mm256_set1_epi32(127));
  pow2 = _mm256_slli_epi32(pow2, 23);
  return _mm256_mul_ps(y, _mm256_castsi256_ps(pow2));
}

// Returns erf(z) and writes exp(-z*z) to gauss.
inline __m256 erf_ps(__m256 z, __m256* gauss) {
  const __m256 sign_mask = _mm256_set1_ps(-0.0f);
  const __m256 az = _mm256_andnot_ps(sign_mask, z);
  const __m256 one = _mm256_set1_ps(1.0f);
  const __m256 t = _mm256_div_ps(one, _mm256_fmadd_ps(_mm256_set1_ps(0.3275911f), az, one));
  __m256 poly = _mm256_set1_ps(1.061405429f);
  poly = _mm256_fmadd_ps(poly, t, _mm256_set1_ps(-1.453152027f));
  poly = _mm256_fmadd_ps(poly, t, _mm256_set1_ps(1.421413741f));
  poly = _mm256_fmadd_ps(poly, t, _mm256_set1_ps(-0.284496736f));
  poly = _mm256_fmadd_ps(poly, t, _mm256_set1_ps(0.254829592f));
  poly = _mm256_mul_ps(poly, t);
  const __m256 e = exp_ps(_mm256_mul_ps(_mm256_xor_ps(az, sign_mask), az));
  *gauss = e;
  const __m256 mag = _mm256_fnmadd_ps(poly, e, one);
  return _mm256_or_ps(mag, _mm256_and_ps(z, sign_mask));
}

void gelu_f32(std::size_t n, const float* x, float* out) {
  const __m256 inv_sqrt2 = _mm256_set1_ps(0.70710678118654752440f);
  const __m256 half = _mm256_set1_ps(0.5f);
  const __m256 one = _mm256_set1_ps(1.0f);
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    const __m256 v = _mm256_loadu_ps(x + i);
    __m256 gauss;
    const __m256 erf = erf_ps(_mm256_mul_ps(v, inv_sqrt2), &gauss);
    _mm256_storeu_ps(out + i, _mm256_mul_ps(_mm256_mul_ps(half, v), _mm256_add_ps(one, erf)));
  }
  for (; i < n; ++i) out[i] = 0.5f * x[i] * (1.0f + std::erf(x[i] * 0.70710678118654752440f));
}

void gelu_backward_f32(std::size_t n, const float* x, const float* grad_out, float* grad_in) {
  const __m256 inv_sqrt2 = _mm256_set1_ps(0.70710678118654752440f);
  const __m256 inv_sqrt2pi = _mm256_set1_ps(0.39894228040143267794f);
  const __m256 half = _mm256_set1_ps(0.5f);
  const __m256 one = _mm256_set1_ps(1.0f);
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    const __m256 v = _mm256_loadu_ps(x + i);
    __m256 gauss;
    const __m256 erf = erf_ps(_mm256_mul_ps(v, inv_sqrt2), &gauss);
    const __m256 cdf = _mm256_mul_ps(half, _mm256_add_ps(one, erf));
    const __m256 pdf = _mm256_mul_ps(inv_sqrt2pi, gauss);
    const __m256 d = _mm256_fmadd_ps(v, pdf, cdf);
    _mm256_storeu_ps(grad_in + i,
                     _mm256_fmadd_ps(_mm256_loadu_ps(grad_out + i), d, _mm256_loadu_ps(grad_in + i)));
  }
  for (; i < n; ++i) {
    const float v = x[i];
    const float cdf = 0.5f * (1.0f + std::erf(v * 0.70710678118654752440f));
    const float pdf = 0.39894228040143267794f * std::exp(-0.5f * v * v);
    grad_in[i] += grad_out[i] * (cdf + v * pdf);
  }
}

void gelu_f64(std::size_t n, const double* x, double* out) { scalar_table<double>().gelu(n, x, out); }

void gelu_backward_f64(std::size_t n, const double* x, const double* grad_out, double* grad_in) {
  scalar_table<double>().gelu_backward(n, x, grad_out, grad_in);
}

const KernelTable<float> kAvx2F{"avx2",         &gemm<float>,  &add<float>, &sub<float>,
                                &mul<float>,    &mul_acc<float>, &axpy<float>, &affine<float>,
                                &dot<float>,    &sum<float>,   &gelu_f32,   &gelu_backward_f32};
const KernelTable<double> kAvx2D{"avx2",          &gemm<double>,    &add<double>,  &sub<double>,
                                 &mul<double>,    &mul_acc<double>, &axpy<double>, &affine<double>,
                                 &dot<double>,    &sum<double>,     &gelu_f64,     &gelu_backward_f64};

}  // namespace

template <>
const KernelTable<float>& avx2_table<float>() {
  return kAvx2F;
}
template <>
const KernelTable<double>& avx2_table<double>() {
  return kAvx2D;
}

}  // namespace yynet::simd::detail
