#include "natmotion/gemm.hpp"

#include <algorithm>
#include <cstring>
#include <vector>

namespace natmotion {
namespace {

typedef double v8d __attribute__((vector_size(64)));

constexpr std::size_t kMr = 6;
constexpr std::size_t kNr = 16;
// Blocking is fixed so the per-element k-summation order never depends on
// the problem's m or n.
constexpr std::size_t kKc = 256;
constexpr std::size_t kMc = 96;
constexpr std::size_t kNc = 4096;

inline v8d load(const double* p) {
  v8d v;
  std::memcpy(&v, p, sizeof(v));
  return v;
}

inline void store(double* p, v8d v) { std::memcpy(p, &v, sizeof(v)); }

// acc (kMr x kNr, row-major) = sum_p a[p] * b[p] over kc packed steps.
void micro_kernel(std::size_t kc, const double* ap, const double* bp, double* acc) {
  v8d c00{}, c01{}, c10{}, c11{}, c20{}, c21{}, c30{}, c31{}, c40{}, c41{}, c50{}, c51{};
  for (std::size_t p = 0; p < kc; ++p) {
    const v8d b0 = load(bp);
    const v8d b1 = load(bp + 8);
    double a = ap[0];
    c00 += a * b0;
    c01 += a * b1;
    a = ap[1];
    c10 += a * b0;
    c11 += a * b1;
    a = ap[2];
    c20 += a * b0;
    c21 += a * b1;
    a = ap[3];
    c30 += a * b0;
    c31 += a * b1;
    a = ap[4];
    c40 += a * b0;
    c41 += a * b1;
    a = ap[5];
    c50 += a * b0;
    c51 += a * b1;
    ap += kMr;
    bp += kNr;
  }
  store(acc + 0 * kNr, c00);
  store(acc + 0 * kNr + 8, c01);
  store(acc + 1 * kNr, c10);
  store(acc + 1 * kNr + 8, c11);
  store(acc + 2 * kNr, c20);
  store(acc + 2 * kNr + 8, c21);
  store(acc + 3 * kNr, c30);
  store(acc + 3 * kNr + 8, c31);
  store(acc + 4 * kNr, c40);
  store(acc + 4 * kNr + 8, c41);
  store(acc + 5 * kNr, c50);
  store(acc + 5 * kNr + 8, c51);
}

void pack_a(Trans trans, const double* a, std::size_t lda, std::size_t i0, std::size_t mc,
            std::size_t p0, std::size_t kc, double* out) {
  for (std::size_t ir = 0; ir < mc; ir += kMr) {
    const std::size_t rows = std::min(kMr, mc - ir);
    if (rows < kMr) std::fill(out, out + kMr * kc, 0.0);
    if (trans == Trans::no) {
      for (std::size_t r = 0; r < rows; ++r) {
        const double* src = a + (i0 + ir + r) * lda + p0;
        for (std::size_t p = 0; p < kc; ++p) out[p * kMr + r] = src[p];
      }
    } else {
      for (std::size_t p = 0; p < kc; ++p) {
        const double* src = a + (p0 + p) * lda + i0 + ir;
        for (std::size_t r = 0; r < rows; ++r) out[p * kMr + r] = src[r];
      }
    }
    out += kMr * kc;
  }
}

void pack_b(Trans trans, const double* b, std::size_t ldb, std::size_t p0, std::size_t kc,
            std::size_t j0, std::size_t nc, double* out) {
  for (std::size_t jr = 0; jr < nc; jr += kNr) {
    const std::size_t cols = std::min(kNr, nc - jr);
    if (cols < kNr) std::fill(out, out + kNr * kc, 0.0);
    if (trans == Trans::no) {
      for (std::size_t p = 0; p < kc; ++p) {
        std::memcpy(out + p * kNr, b + (p0 + p) * ldb + j0 + jr, cols * sizeof(double));
      }
    } else {
      for (std::size_t c = 0; c < cols; ++c) {
        const double* src = b + (j0 + jr + c) * ldb + p0;
        for (std::size_t p = 0; p < kc; ++p) out[p * kNr + c] = src[p];
      }
    }
    out += kNr * kc;
  }
}

std::size_t round_up(std::size_t v, std::size_t m) { return (v + m - 1) / m * m; }

}  // namespace

void gemm(Trans trans_a, Trans trans_b, std::size_t m, std::size_t n, std::size_t k,
          const double* a, std::size_t lda, const double* b, std::size_t ldb, double* c,
          std::size_t ldc, bool accumulate) {
  if (m == 0 || n == 0) return;
  if (k == 0) {
    if (!accumulate) {
      for (std::size_t i = 0; i < m; ++i) std::fill(c + i * ldc, c + i * ldc + n, 0.0);
    }
    return;
  }

  thread_local std::vector<double> packed_a;
  thread_local std::vector<double> packed_b;
  alignas(64) double acc[kMr * kNr];

  for (std::size_t jc = 0; jc < n; jc += kNc) {
    const std::size_t nc = std::min(kNc, n - jc);
    for (std::size_t pc = 0; pc < k; pc += kKc) {
      const std::size_t kc = std::min(kKc, k - pc);
      const bool overwrite = !accumulate && pc == 0;
      packed_b.resize(round_up(nc, kNr) * kc);
      pack_b(trans_b, b, ldb, pc, kc, jc, nc, packed_b.data());

      for (std::size_t ic = 0; ic < m; ic += kMc) {
        const std::size_t mc = std::min(kMc, m - ic);
        packed_a.resize(round_up(mc, kMr) * kc);
        pack_a(trans_a, a, lda, ic, mc, pc, kc, packed_a.data());

        for (std::size_t jr = 0; jr < nc; jr += kNr) {
          const std::size_t cols = std::min(kNr, nc - jr);
          const double* bp = packed_b.data() + (jr / kNr) * kNr * kc;
          for (std::size_t ir = 0; ir < mc; ir += kMr) {
            const std::size_t rows = std::min(kMr, mc - ir);
            const double* ap = packed_a.data() + (ir / kMr) * kMr * kc;
            micro_kernel(kc, ap, bp, acc);
            for (std::size_t r = 0; r < rows; ++r) {
              double* crow = c + (ic + ir + r) * ldc + jc + jr;
              const double* arow = acc + r * kNr;
              if (overwrite) {
                for (std::size_t q = 0; q < cols; ++q) crow[q] = arow[q];
              } else {
                for (std::size_t q = 0; q < cols; ++q) crow[q] += arow[q];
              }
            }
          }
        }
      }
    }
  }
}

}  // namespace natmotion
