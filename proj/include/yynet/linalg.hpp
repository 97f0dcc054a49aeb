#pragma once

#include <cstddef>

namespace yynet::linalg {

enum class Trans { kNo, kYes };

/// c[m,n] (+)= op(a)[m,k] * op(b)[k,n] over dense row-major storage.
/// A transposed operand is stored as (k,m) resp. (n,k); it is copied into a
/// scratch buffer and handed to the active NN kernel.
template <class Real>
void gemm(Trans trans_a, Trans trans_b, std::size_t m, std::size_t n, std::size_t k, const Real* a,
          const Real* b, Real* c, bool accumulate);

/// out[cols, rows] = in[rows, cols]^T
template <class Real>
void transpose(std::size_t rows, std::size_t cols, const Real* in, Real* out);

}  // namespace yynet::linalg
