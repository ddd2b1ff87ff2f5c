// Times the OpenMP matmul kernels against the serial reference.
#include <algorithm>
#include <chrono>
#include <cstdio>
#include <functional>
#include <random>
#include <vector>

#include "vipg/kernels.hpp"

namespace {

using Clock = std::chrono::steady_clock;

double time_ms(const std::function<void()>& fn, int reps) {
  // warmup
  fn();
  const auto start = Clock::now();
  for (int i = 0; i < reps; ++i) fn();
  const auto end = Clock::now();
  return std::chrono::duration<double, std::milli>(end - start).count() / reps;
}

}  // namespace

int main() {
  std::mt19937 rng(42);
  std::uniform_real_distribution<float> u(-1.0f, 1.0f);

  std::printf("%8s %12s %12s %8s\n", "size", "serial(ms)", "omp(ms)",
              "speedup");
  for (int n : {64, 128, 256, 512}) {
    std::vector<float> a(static_cast<size_t>(n) * n), b(a.size()), c(a.size());
    for (auto& v : a) v = u(rng);
    for (auto& v : b) v = u(rng);
    const int reps = n <= 128 ? 50 : 10;

    const double serial = time_ms(
        [&] {
          std::fill(c.begin(), c.end(), 0.0f);
          vipg::kernels::ref::gemm_acc(a.data(), b.data(), c.data(), n, n, n);
        },
        reps);
    const double omp = time_ms(
        [&] {
          std::fill(c.begin(), c.end(), 0.0f);
          vipg::kernels::gemm_acc(a.data(), b.data(), c.data(), n, n, n);
        },
        reps);
    std::printf("%8d %12.3f %12.3f %8.2fx\n", n, serial, omp, serial / omp);
  }
  return 0;
}
