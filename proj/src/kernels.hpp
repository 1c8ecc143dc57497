#pragma once

#include <cstddef>

namespace ff::kernels {

// C[m,n] (+)= op(A)[m,k] * op(B)[k,n], all row-major.
// op(A) = A (m×k, lda = k) or Aᵀ (A stored k×m); likewise for B.
void gemm(std::size_t m, std::size_t n, std::size_t k, const double* a, bool trans_a, const double* b,
          bool trans_b, double* c, bool accumulate);

}  // namespace ff::kernels
