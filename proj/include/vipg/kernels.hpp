#pragma once

#include <cstddef>

namespace vipg::kernels {

// C[m x n] += A[m x k] * B[k x n], row-major. OpenMP over rows of C; each
// output element is reduced serially so results are identical for any
// thread count.
void gemm_acc(const float* a, const float* b, float* c, int m, int k, int n);

// C[m x n] += A[m x k] * B[n x k]^T
void gemm_nt_acc(const float* a, const float* b, float* c, int m, int k, int n);

// C[k x n] += A[m x k]^T * B[m x n]
void gemm_tn_acc(const float* a, const float* b, float* c, int m, int k, int n);

// Serial reference implementations, kept for equivalence tests and the
// kernel benchmark.
namespace ref {
void gemm_acc(const float* a, const float* b, float* c, int m, int k, int n);
void gemm_nt_acc(const float* a, const float* b, float* c, int m, int k, int n);
void gemm_tn_acc(const float* a, const float* b, float* c, int m, int k, int n);
}  // namespace ref

}  // namespace vipg::kernels
