#pragma once

// Row-major GEMM helpers on raw double buffers, backed by Eigen. Callers
// parallelize over independent batch items; each product here is a single
// contiguous GEMM so results never depend on thread count.

namespace hdrdistill::detail {

// C[M,N] = A[M,K] * B[K,N], or += when accumulate is set.
void gemm_nn(const double* a, const double* b, double* c, int m, int k, int n, bool accumulate);

// C[M,N] = A[M,K] * B[N,K]^T.
void gemm_nt(const double* a, const double* b, double* c, int m, int k, int n, bool accumulate);

// C[M,N] = A[K,M]^T * B[K,N].
void gemm_tn(const double* a, const double* b, double* c, int m, int k, int n, bool accumulate);

}  // namespace hdrdistill::detail
