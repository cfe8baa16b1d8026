#pragma once

// Dense f32 kernels behind the autodiff matmul. The default entry points are
// OpenMP-parallel over output rows; `serial::` holds the reference loops the
// tests compare against. Both perform the same per-element operation order,
// so results are bitwise identical regardless of thread count.

namespace crowdfm::kernels {

/// C[m x n] += A[m x k] * B[k x n]
void gemm_nn(const float* a, const float* b, float* c, int m, int k, int n);
/// C[m x n] += A[m x k] * B[n x k]^T
void gemm_nt(const float* a, const float* b, float* c, int m, int k, int n);
/// C[m x n] += A[k x m]^T * B[k x n]
void gemm_tn(const float* a, const float* b, float* c, int m, int k, int n);

/// Number of OpenMP threads available to the parallel kernels.
int max_threads();
void set_threads(int threads);

namespace serial {
void gemm_nn(const float* a, const float* b, float* c, int m, int k, int n);
void gemm_nt(const float* a, const float* b, float* c, int m, int k, int n);
void gemm_tn(const float* a, const float* b, float* c, int m, int k, int n);
}  // namespace serial

}  // namespace crowdfm::kernels
