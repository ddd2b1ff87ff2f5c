#include <doctest.h>

#include <random>
#include <vector>

#include "vipg/kernels.hpp"

using namespace vipg;

namespace {
std::vector<float> random_vec(size_t n, uint32_t seed) {
  std::mt19937 rng(seed);
  std::uniform_real_distribution<float> u(-1.0f, 1.0f);
  std::vector<float> v(n);
  for (auto& x : v) x = u(rng);
  return v;
}
}  // namespace

TEST_CASE("omp kernels match the serial reference bit for bit") {
  const int m = 17, k = 23, n = 13;
  auto a = random_vec(static_cast<size_t>(m) * k, 1);
  auto b = random_vec(static_cast<size_t>(k) * n, 2);
  auto bt = random_vec(static_cast<size_t>(n) * k, 3);
  auto bm = random_vec(static_cast<size_t>(m) * n, 4);

  std::vector<float> c_omp(static_cast<size_t>(m) * n, 0.0f), c_ref = c_omp;
  kernels::gemm_acc(a.data(), b.data(), c_omp.data(), m, k, n);
  kernels::ref::gemm_acc(a.data(), b.data(), c_ref.data(), m, k, n);
  CHECK(c_omp == c_ref);

  std::vector<float> d_omp(static_cast<size_t>(m) * n, 0.0f), d_ref = d_omp;
  kernels::gemm_nt_acc(a.data(), bt.data(), d_omp.data(), m, k, n);
  kernels::ref::gemm_nt_acc(a.data(), bt.data(), d_ref.data(), m, k, n);
  CHECK(d_omp == d_ref);

  std::vector<float> e_omp(static_cast<size_t>(k) * n, 0.0f), e_ref = e_omp;
  kernels::gemm_tn_acc(a.data(), bm.data(), e_omp.data(), m, k, n);
  kernels::ref::gemm_tn_acc(a.data(), bm.data(), e_ref.data(), m, k, n);
  CHECK(e_omp == e_ref);
}

TEST_CASE("gemm accumulates into the output") {
  const int n = 2;
  std::vector<float> a = {1, 0, 0, 1};
  std::vector<float> b = {1, 2, 3, 4};
  std::vector<float> c = {10, 10, 10, 10};
  kernels::gemm_acc(a.data(), b.data(), c.data(), n, n, n);
  CHECK(c == std::vector<float>{11, 12, 13, 14});
}
