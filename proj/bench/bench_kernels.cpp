// Timing comparison of the serial reference kernels against their OpenMP
// variants.  Prints one row per kernel/size with speedup.

#include <chrono>
#include <cstdio>
#include <functional>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "bcrl/dataset.hpp"
#include "bcrl/kernels.hpp"

using bcrl::kernels::Mat;

namespace {

double time_ms(const std::function<void()>& fn, int reps) {
  fn();  // warm-up
  auto t0 = std::chrono::steady_clock::now();
  for (int i = 0; i < reps; ++i) fn();
  auto t1 = std::chrono::steady_clock::now();
  return std::chrono::duration<double, std::milli>(t1 - t0).count() / reps;
}

void fill(Mat& m, bcrl::data::Rng& rng) {
  for (auto& v : m.v) v = rng.normal();
}

void row(const char* name, double serial_ms, double omp_ms) {
  std::printf("%-28s %10.3f ms %10.3f ms %8.2fx\n", name, serial_ms, omp_ms,
              serial_ms / omp_ms);
}

}  // namespace

int main() {
#ifdef _OPENMP
  std::printf("threads: %d\n", omp_get_max_threads());
#else
  std::printf("threads: 1 (OpenMP disabled)\n");
#endif
  std::printf("%-28s %13s %13s %9s\n", "kernel", "serial", "omp", "speedup");

  bcrl::data::Rng rng(7);
  for (size_t n : {128, 384}) {
    Mat a(n, n), b(n, n), c(n, n);
    fill(a, rng);
    fill(b, rng);
    char name[64];
    std::snprintf(name, sizeof name, "matmul_nt %zux%zu", n, n);
    row(name, time_ms([&] { matmul_nt_serial(a, b, c); }, 5),
        time_ms([&] { matmul_nt_omp(a, b, c); }, 5));
    std::snprintf(name, sizeof name, "matmul_nn %zux%zu", n, n);
    row(name, time_ms([&] { matmul_nn_serial(a, b, c); }, 5),
        time_ms([&] { matmul_nn_omp(a, b, c); }, 5));
    std::snprintf(name, sizeof name, "matmul_tn %zux%zu", n, n);
    row(name, time_ms([&] { matmul_tn_serial(a, b, c); }, 5),
        time_ms([&] { matmul_tn_omp(a, b, c); }, 5));
  }

  {
    size_t nq = 256, nref = 4096, dim = 209, k = 50;
    std::vector<float> q(nq * dim), r(nref * dim);
    for (auto& v : q) v = float(rng.normal());
    for (auto& v : r) v = float(rng.normal());
    std::vector<float> d(nq * nref);
    row("pairwise_sqdist 256x4096",
        time_ms([&] {
          bcrl::kernels::pairwise_sqdist_serial(q.data(), nq, r.data(), nref, dim,
                                                d.data());
        }, 3),
        time_ms([&] {
          bcrl::kernels::pairwise_sqdist_omp(q.data(), nq, r.data(), nref, dim,
                                             d.data());
        }, 3));
    std::vector<uint32_t> idx(nq * k);
    row("knn k=50 256x4096",
        time_ms([&] {
          bcrl::kernels::knn_serial(q.data(), nq, r.data(), nref, dim, k,
                                    idx.data());
        }, 3),
        time_ms([&] {
          bcrl::kernels::knn_omp(q.data(), nq, r.data(), nref, dim, k, idx.data());
        }, 3));
  }
  return 0;
}
