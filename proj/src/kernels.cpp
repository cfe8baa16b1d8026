#include "crowdfm/kernels.hpp"

#include <omp.h>

namespace crowdfm::kernels {

namespace {

// Below this many multiply-adds the fork/join cost dominates.
constexpr long kParallelWork = 1L << 16;

inline void row_nn(const float* a, const float* b, float* c, int i, int k, int n) {
  float* ci = c + static_cast<long>(i) * n;
  const float* ai = a + static_cast<long>(i) * k;
  for (int p = 0; p < k; ++p) {
    const float av = ai[p];
    const float* bp = b + static_cast<long>(p) * n;
    for (int j = 0; j < n; ++j) ci[j] += av * bp[j];
  }
}

inline void row_nt(const float* a, const float* b, float* c, int i, int k, int n) {
  float* ci = c + static_cast<long>(i) * n;
  const float* ai = a + static_cast<long>(i) * k;
  for (int j = 0; j < n; ++j) {
    const float* bj = b + static_cast<long>(j) * k;
    float acc = 0.0f;
    for (int p = 0; p < k; ++p) acc += ai[p] * bj[p];
    ci[j] += acc;
  }
}

inline void row_tn(const float* a, const float* b, float* c, int i, int m, int k, int n) {
  float* ci = c + static_cast<long>(i) * n;
  for (int p = 0; p < k; ++p) {
    const float av = a[static_cast<long>(p) * m + i];
    const float* bp = b + static_cast<long>(p) * n;
    for (int j = 0; j < n; ++j) ci[j] += av * bp[j];
  }
}

}  // namespace

void gemm_nn(const float* a, const float* b, float* c, int m, int k, int n) {
  const long work = static_cast<long>(m) * k * n;
#pragma omp parallel for schedule(static) if (work > kParallelWork)
  for (int i = 0; i < m; ++i) row_nn(a, b, c, i, k, n);
}

void gemm_nt(const float* a, const float* b, float* c, int m, int k, int n) {
  const long work = static_cast<long>(m) * k * n;
#pragma omp parallel for schedule(static) if (work > kParallelWork)
  for (int i = 0; i < m; ++i) row_nt(a, b, c, i, k, n);
}

void gemm_tn(const float* a, const float* b, float* c, int m, int k, int n) {
  const long work = static_cast<long>(m) * k * n;
#pragma omp parallel for schedule(static) if (work > kParallelWork)
  for (int i = 0; i < m; ++i) row_tn(a, b, c, i, m, k, n);
}

int max_threads() { return omp_get_max_threads(); }

void set_threads(int threads) {
  if (threads > 0) omp_set_num_threads(threads);
}

namespace serial {

void gemm_nn(const float* a, const float* b, float* c, int m, int k, int n) {
  for (int i = 0; i < m; ++i) row_nn(a, b, c, i, k, n);
}

void gemm_nt(const float* a, const float* b, float* c, int m, int k, int n) {
  for (int i = 0; i < m; ++i) row_nt(a, b, c, i, k, n);
}

void gemm_tn(const float* a, const float* b, float* c, int m, int k, int n) {
  for (int i = 0; i < m; ++i) row_tn(a, b, c, i, m, k, n);
}

}  // namespace serial

}  // namespace crowdfm::kernels
