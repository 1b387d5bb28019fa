#pragma once

#include <cstddef>

// Dense kernels used by the decoder. Each has an OpenMP version and a serial
// reference with the same per-element summation order, so both produce
// bit-identical results for any thread count.
//
// Matrices are row-major with explicit leading dimensions.
namespace nd::kernels {

// C[n x m] (+)= A[n x k] * B[k x m]
void gemm_nn(const double* a, std::size_t lda, const double* b, std::size_t ldb, double* c, std::size_t ldc,
             std::size_t n, std::size_t k, std::size_t m, bool accumulate);

// C[k x m] += A[n x k]^T * B[n x m]
void gemm_tn_acc(const double* a, std::size_t lda, const double* b, std::size_t ldb, double* c, std::size_t ldc,
                 std::size_t n, std::size_t k, std::size_t m);

// C[n x k] (+)= A[n x m] * B[k x m]^T
void gemm_nt(const double* a, std::size_t lda, const double* b, std::size_t ldb, double* c, std::size_t ldc,
             std::size_t n, std::size_t m, std::size_t k, bool accumulate);

// Work (multiply-adds) below which the parallel kernels stay serial.
inline constexpr std::size_t kParallelMinWork = 1 << 15;

namespace serial {
void gemm_nn(const double* a, std::size_t lda, const double* b, std::size_t ldb, double* c, std::size_t ldc,
             std::size_t n, std::size_t k, std::size_t m, bool accumulate);
void gemm_tn_acc(const double* a, std::size_t lda, const double* b, std::size_t ldb, double* c, std::size_t ldc,
                 std::size_t n, std::size_t k, std::size_t m);
void gemm_nt(const double* a, std::size_t lda, const double* b, std::size_t ldb, double* c, std::size_t ldc,
             std::size_t n, std::size_t m, std::size_t k, bool accumulate);
}  // namespace serial

}  // namespace nd::kernels
