#include "nd/kernels.hpp"

#include <omp.h>

#include <algorithm>

namespace nd::kernels {

namespace {

// Shared loop bodies. Every output element accumulates its terms in
// ascending order of the reduction index, whatever the partitioning.
inline void nn_rows(const double* a, std::size_t lda, const double* b, std::size_t ldb, double* c, std::size_t ldc,
                    std::size_t i, std::size_t k, std::size_t j0, std::size_t j1, bool accumulate) {
  double* ci = c + i * ldc;
  if (!accumulate) std::fill(ci + j0, ci + j1, 0.0);
  const double* ai = a + i * lda;
  for (std::size_t p = 0; p < k; ++p) {
    const double av = ai[p];
    const double* bp = b + p * ldb;
    for (std::size_t j = j0; j < j1; ++j) ci[j] += av * bp[j];
  }
}

inline void tn_row(const double* a, std::size_t lda, const double* b, std::size_t ldb, double* c, std::size_t ldc,
                   std::size_t n, std::size_t p, std::size_t m) {
  double* cp = c + p * ldc;
  for (std::size_t i = 0; i < n; ++i) {
    const double av = a[i * lda + p];
    if (av == 0.0) continue;
    const double* bi = b + i * ldb;
    for (std::size_t j = 0; j < m; ++j) cp[j] += av * bi[j];
  }
}

inline void nt_elem(const double* a, std::size_t lda, const double* b, std::size_t ldb, double* c, std::size_t ldc,
                    std::size_t i, std::size_t p, std::size_t m, bool accumulate) {
  const double* ai = a + i * lda;
  const double* bp = b + p * ldb;
  double s = 0.0;
  for (std::size_t j = 0; j < m; ++j) s += ai[j] * bp[j];
  double& out = c[i * ldc + p];
  out = accumulate ? out + s : s;
}

constexpr std::size_t kColumnChunk = 64;

}  // namespace

void gemm_nn(const double* a, std::size_t lda, const double* b, std::size_t ldb, double* c, std::size_t ldc,
             std::size_t n, std::size_t k, std::size_t m, bool accumulate) {
  const bool big = n * k * m >= kParallelMinWork;
  if (n >= 4 * static_cast<std::size_t>(omp_get_max_threads()) || !big) {
#pragma omp parallel for schedule(static) if (big)
    for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(n); ++i)
      nn_rows(a, lda, b, ldb, c, ldc, static_cast<std::size_t>(i), k, 0, m, accumulate);
  } else {
    // Few rows: split the output columns instead.
    const std::size_t chunks = (m + kColumnChunk - 1) / kColumnChunk;
#pragma omp parallel for collapse(2) schedule(static)
    for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(n); ++i)
      for (std::ptrdiff_t q = 0; q < static_cast<std::ptrdiff_t>(chunks); ++q) {
        const std::size_t j0 = static_cast<std::size_t>(q) * kColumnChunk;
        nn_rows(a, lda, b, ldb, c, ldc, static_cast<std::size_t>(i), k, j0, std::min(m, j0 + kColumnChunk), accumulate);
      }
  }
}

void gemm_tn_acc(const double* a, std::size_t lda, const double* b, std::size_t ldb, double* c, std::size_t ldc,
                 std::size_t n, std::size_t k, std::size_t m) {
#pragma omp parallel for schedule(static) if (n * k * m >= kParallelMinWork)
  for (std::ptrdiff_t p = 0; p < static_cast<std::ptrdiff_t>(k); ++p)
    tn_row(a, lda, b, ldb, c, ldc, n, static_cast<std::size_t>(p), m);
}

void gemm_nt(const double* a, std::size_t lda, const double* b, std::size_t ldb, double* c, std::size_t ldc,
             std::size_t n, std::size_t m, std::size_t k, bool accumulate) {
#pragma omp parallel for collapse(2) schedule(static) if (n * k * m >= kParallelMinWork)
  for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(n); ++i)
    for (std::ptrdiff_t p = 0; p < static_cast<std::ptrdiff_t>(k); ++p)
      nt_elem(a, lda, b, ldb, c, ldc, static_cast<std::size_t>(i), static_cast<std::size_t>(p), m, accumulate);
}

namespace serial {

void gemm_nn(const double* a, std::size_t lda, const double* b, std::size_t ldb, double* c, std::size_t ldc,
             std::size_t n, std::size_t k, std::size_t m, bool accumulate) {
  for (std::size_t i = 0; i < n; ++i) nn_rows(a, lda, b, ldb, c, ldc, i, k, 0, m, accumulate);
}

void gemm_tn_acc(const double* a, std::size_t lda, const double* b, std::size_t ldb, double* c, std::size_t ldc,
                 std::size_t n, std::size_t k, std::size_t m) {
  for (std::size_t p = 0; p < k; ++p) tn_row(a, lda, b, ldb, c, ldc, n, p, m);
}

void gemm_nt(const double* a, std::size_t lda, const double* b, std::size_t ldb, double* c, std::size_t ldc,
             std::size_t n, std::size_t m, std::size_t k, bool accumulate) {
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t p = 0; p < k; ++p) nt_elem(a, lda, b, ldb, c, ldc, i, p, m, accumulate);
}

}  // namespace serial

}  // namespace nd::kernels
