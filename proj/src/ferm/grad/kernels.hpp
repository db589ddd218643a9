#pragma once

#include <cstdint>

namespace ferm::grad::kern {

// Single-precision GEMM with indirect operand access:
//
//   C[M x N] (+)= A * B
//
//   A element (m, k) is arows[m][k * acs]     (rows via pointer table,
//                                              arbitrary column stride)
//   B row k is brows[k], contiguous along n   (rows via pointer table)
//   C is row-major with leading dimension ldc.
//
// The pointer-table form lets convolution forward/backward run as implicit
// GEMM directly over image planes (no im2col copy for the stride-1 layers),
// and lets transposed operands (e.g. A = X^T) be expressed with acs = lda.
//
// Optional epilogue: per-row bias (bias_row[m] added to row m), per-column
// bias (bias_col[n] added to column n), ReLU. Epilogue applies only when
// accumulate == false (a fused final pass); accumulate mode is raw += only.
struct GemmArgs {
  int M = 0, N = 0, K = 0;
  const float* const* arows = nullptr;
  int64_t acs = 1;
  const float* const* brows = nullptr;
  float* c = nullptr;
  int64_t ldc = 0;
  bool accumulate = false;
  const float* bias_row = nullptr;
  const float* bias_col = nullptr;
  bool relu = false;
};

void gemm_ptr(const GemmArgs& g);

// Dense convenience wrapper. A element (m, k) = a[m * ars + k * acs], so a
// plain row-major A is (ars = lda, acs = 1) and a transposed view of a
// row-major X is (ars = 1, acs = ldx). B is row-major (ldb). Builds the
// pointer tables internally.
void gemm_dense(int M, int N, int K, const float* a, int64_t ars, int64_t acs,
                const float* b, int64_t ldb, float* c, int64_t ldc,
                bool accumulate = false, const float* bias_row = nullptr,
                const float* bias_col = nullptr, bool relu = false);

// dst[C x R] = src[R x C]^T, plain f32 blocked transpose.
void transpose_f32(const float* src, int rows, int cols, float* dst);

// Blocked transpose with explicit leading dimensions: dst[c * dst_ld + r] =
// src[r * src_ld + c] for r < rows, c < cols.
void transpose_strided_f32(const float* src, int rows, int cols, int64_t src_ld,
                           float* dst, int64_t dst_ld);

}  // namespace ferm::grad::kern
