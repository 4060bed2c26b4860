#pragma once

#include <cblas.h>

#include <cstddef>

namespace apss::detail {

// Row-major C = alpha * op(A) * op(B) + beta * C.
inline void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k, float alpha,
                 const float* a, std::size_t lda, const float* b, std::size_t ldb, float beta, float* c,
                 std::size_t ldc) {
  if (m == 0 || n == 0) return;
  cblas_sgemm(CblasRowMajor, trans_a ? CblasTrans : CblasNoTrans, trans_b ? CblasTrans : CblasNoTrans,
              static_cast<int>(m), static_cast<int>(n), static_cast<int>(k), alpha, a, static_cast<int>(lda), b,
              static_cast<int>(ldb), beta, c, static_cast<int>(ldc));
}

// OpenBLAS 0.3.20 dgemm returns wrong results on AVX-512 (Cooperlake)
// kernels once the row-major column count reaches 193, so columns are
// processed in blocks of at most 128.
inline void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k, double alpha,
                 const double* a, std::size_t lda, const double* b, std::size_t ldb, double beta, double* c,
                 std::size_t ldc) {
  if (m == 0 || n == 0) return;
  constexpr std::size_t kBlock = 128;
  for (std::size_t j0 = 0; j0 < n; j0 += kBlock) {
    const std::size_t nb = n - j0 < kBlock ? n - j0 : kBlock;
    const double* bj = trans_b ? b + j0 * ldb : b + j0;
    cblas_dgemm(CblasRowMajor, trans_a ? CblasTrans : CblasNoTrans, trans_b ? CblasTrans : CblasNoTrans,
                static_cast<int>(m), static_cast<int>(nb), static_cast<int>(k), alpha, a, static_cast<int>(lda), bj,
                static_cast<int>(ldb), beta, c + j0, static_cast<int>(ldc));
  }
}

}  // namespace apss::detail
