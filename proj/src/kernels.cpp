#include "vipg/kernels.hpp"

namespace vipg::kernels {

void gemm_acc(const float* a, const float* b, float* c, int m, int k, int n) {
#pragma omp parallel for schedule(static)
  for (int i = 0; i < m; ++i) {
    const float* ai = a + static_cast<size_t>(i) * k;
    float* ci = c + static_cast<size_t>(i) * n;
    for (int p = 0; p < k; ++p) {
      const float av = ai[p];
      if (av == 0.0f) continue;
      const float* bp = b + static_cast<size_t>(p) * n;
      for (int j = 0; j < n; ++j) ci[j] += av * bp[j];
    }
  }
}

void gemm_nt_acc(const float* a, const float* b, float* c, int m, int k, int n) {
#pragma omp parallel for schedule(static)
  for (int i = 0; i < m; ++i) {
    const float* ai = a + static_cast<size_t>(i) * k;
    float* ci = c + static_cast<size_t>(i) * n;
    for (int j = 0; j < n; ++j) {
      const float* bj = b + static_cast<size_t>(j) * k;
      float acc = 0.0f;
      for (int p = 0; p < k; ++p) acc += ai[p] * bj[p];
      ci[j] += acc;
    }
  }
}

void gemm_tn_acc(const float* a, const float* b, float* c, int m, int k, int n) {
#pragma omp parallel for schedule(static)
  for (int p = 0; p < k; ++p) {
    float* cp = c + static_cast<size_t>(p) * n;
    for (int i = 0; i < m; ++i) {
      const float av = a[static_cast<size_t>(i) * k + p];
      if (av == 0.0f) continue;
      const float* bi = b + static_cast<size_t>(i) * n;
      for (int j = 0; j < n; ++j) cp[j] += av * bi[j];
    }
  }
}

namespace ref {

void gemm_acc(const float* a, const float* b, float* c, int m, int k, int n) {
  for (int i = 0; i < m; ++i) {
    const float* ai = a + static_cast<size_t>(i) * k;
    float* ci = c + static_cast<size_t>(i) * n;
    for (int p = 0; p < k; ++p) {
      const float av = ai[p];
      if (av == 0.0f) continue;
      const float* bp = b + static_cast<size_t>(p) * n;
      for (int j = 0; j < n; ++j) ci[j] += av * bp[j];
    }
  }
}

void gemm_nt_acc(const float* a, const float* b, float* c, int m, int k, int n) {
  for (int i = 0; i < m; ++i) {
    const float* ai = a + static_cast<size_t>(i) * k;
    float* ci = c + static_cast<size_t>(i) * n;
    for (int j = 0; j < n; ++j) {
      const float* bj = b + static_cast<size_t>(j) * k;
      float acc = 0.0f;
      for (int p = 0; p < k; ++p) acc += ai[p] * bj[p];
      ci[j] += acc;
    }
  }
}

void gemm_tn_acc(const float* a, const float* b, float* c, int m, int k, int n) {
  for (int p = 0; p < k; ++p) {
    float* cp = c + static_cast<size_t>(p) * n;
    for (int i = 0; i < m; ++i) {
      const float av = a[static_cast<size_t>(i) * k + p];
      if (av == 0.0f) continue;
      const float* bi = b + static_cast<size_t>(i) * n;
      for (int j = 0; j < n; ++j) cp[j] += av * bi[j];
    }
  }
}

}  // namespace ref

}  // namespace vipg::kernels
