#pragma once

#include <cstddef>

namespace natmotion {

enum class Trans { no, yes };

/// Row-major C (m x n) = op(A) (m x k) * op(B) (k x n), or C += ... when
/// `accumulate` is set. Leading dimensions are row strides of the stored
/// (untransposed) arrays.
///
/// Every output element is produced by the same instruction sequence over k,
/// independent of m, n and its position in the output, so results are
/// bitwise reproducible when rows or columns are added or removed.
void gemm(Trans trans_a, Trans trans_b, std::size_t m, std::size_t n, std::size_t k,
          const double* a, std::size_t lda, const double* b, std::size_t ldb, double* c,
          std::size_t ldc, bool accumulate = false);

}  // namespace natmotion
