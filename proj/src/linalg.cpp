#include "yynet/linalg.hpp"

#include <vector>

#include "yynet/simd/kernels.hpp"

namespace yynet::linalg {

template <class Real>
void transpose(std::size_t rows, std::size_t cols, const Real* in, Real* out) {
  constexpr std::size_t kTile = 32;
  for (std::size_t r0 = 0; r0 < rows; r0 += kTile) {
    const std::size_t r1 = r0 + kTile < rows ? r0 + kTile : rows;
    for (std::size_t c0 = 0; c0 < cols; c0 += kTile) {
      const std::size_t c1 = c0 + kTile < cols ? c0 + kTile : cols;
      for (std::size_t r = r0; r < r1; ++r)
        for (std::size_t c = c0; c < c1; ++c) out[c * rows + r] = in[r * cols + c];
    }
  }
}

template <class Real>
void gemm(Trans trans_a, Trans trans_b, std::size_t m, std::size_t n, std::size_t k, const Real* a,
          const Real* b, Real* c, bool accumulate) {
  thread_local std::vector<Real> scratch_a;
  thread_local std::vector<Real> scratch_b;
  const Real* pa = a;
  const Real* pb = b;
  if (trans_a == Trans::kYes) {
    scratch_a.resize(m * k);
    transpose(k, m, a, scratch_a.data());
    pa = scratch_a.data();
  }
  if (trans_b == Trans::kYes) {
    scratch_b.resize(k * n);
    transpose(n, k, b, scratch_b.data());
    pb = scratch_b.data();
  }
  simd::kernels<Real>().gemm(m, n, k, pa, k, pb, n, c, n, accumulate);
}

template void transpose<float>(std::size_t, std::size_t, const float*, float*);
template void transpose<double>(std::size_t, std::size_t, const double*, double*);
template void gemm<float>(Trans, Trans, std::size_t, std::size_t, std::size_t, const float*,
                          const float*, float*, bool);
template void gemm<double>(Trans, Trans, std::size_t, std::size_t, std::size_t, const double*,
                           const double*, double*, bool);

}  // namespace yynet::linalg
