// Copyright 2026 The Parallel GPT Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <vector>

// Row-major dense kernels. All accumulate into the output.
namespace pgpt::kernels {

/// C[m,n] += A[m,k] * B[k,n]
template <typename Real>
void gemm_nn(std::size_t m, std::size_t k, std::size_t n, const Real* __restrict a,
             const Real* __restrict b, Real* __restrict c) {
  for (std::size_t i = 0; i < m; ++i) {
    Real* __restrict crow = c + i * n;
    const Real* arow = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const Real av = arow[p];
      if (av == Real(0)) continue;
      const Real* __restrict brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

/// C[k,n] += A[m,k]^T * B[m,n]
template <typename Real>
void gemm_tn(std::size_t m, std::size_t k, std::size_t n, const Real* __restrict a,
             const Real* __restrict b, Real* __restrict c) {
  for (std::size_t i = 0; i < m; ++i) {
    const Real* arow = a + i * k;
    const Real* __restrict brow = b + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const Real av = arow[p];
      if (av == Real(0)) continue;
      Real* __restrict crow = c + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

template <typename Real>
void transpose(std::size_t rows, std::size_t cols, const Real* src, Real* dst) {
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < cols; ++j) dst[j * rows + i] = src[i * cols + j];
}

/// C[m,n] += A[m,k] * B[n,k]^T
template <typename Real>
void gemm_nt(std::size_t m, std::size_t k, std::size_t n, const Real* a, const Real* b, Real* c) {
  std::vector<Real> bt(k * n);
  transpose(n, k, b, bt.data());
  gemm_nn(m, k, n, a, bt.data(), c);
}

}  // namespace pgpt::kernels
