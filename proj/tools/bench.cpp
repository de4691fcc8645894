// Wall-clock comparison of the OpenMP kernels against their serial
// counterparts: gemm vs the reference triple loop, and batch gradients in
// serial vs parallel execution.

#include <chrono>
#include <cstdio>
#include <vector>

#include <omp.h>

#include "chamae/harness/config.hpp"
#include "chamae/harness/train.hpp"
#include "chamae/kernels.hpp"
#include "chamae/rng.hpp"

using namespace chamae;
using kernels::Trans;

namespace {

template <typename F>
double best_ms(F&& f, int reps) {
  double best = 1e300;
  for (int r = 0; r < reps; ++r) {
    const auto t0 = std::chrono::steady_clock::now();
    f();
    best = std::min(best, std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count());
  }
  return best;
}

void bench_gemm(std::size_t m, std::size_t n, std::size_t k) {
  Philox r(1);
  std::vector<float> a(m * k), b(k * n), c(m * n);
  for (auto& x : a) x = float(r.normal());
  for (auto& x : b) x = float(r.normal());
  const double ref = best_ms([&] { kernels::reference::gemm(Trans::kNo, Trans::kNo, m, n, k, 1.f, a.data(), b.data(), 0.f, c.data()); }, 3);
  const double opt = best_ms([&] { kernels::gemm(Trans::kNo, Trans::kNo, m, n, k, 1.f, a.data(), b.data(), 0.f, c.data()); }, 5);
  std::printf("gemm %4zux%4zux%4zu  reference %9.3f ms  optimized %9.3f ms  speedup %5.2fx\n", m, n, k, ref, opt,
              ref / opt);
}

void bench_batch() {
  RunConfig cfg;
  cfg.data.train = 32;
  const auto data = generate_split(cfg.data, Split::kTrain, cfg.data.train);
  const auto params = init_model(cfg.model, 0, data);
  std::vector<MultiChannelImage> images;
  for (const auto& s : data) images.push_back(prepare_image(params, s.image));
  std::vector<BatchItem> batch;
  for (std::size_t i = 0; i < images.size(); ++i)
    batch.push_back({&images[i], data[i].label,
                     draw_mask(params.config().patches_per_channel(), images[i].channels(), cfg.train.mask,
                               mask_rng(0, 0, i))});
  const double serial = best_ms([&] { compute_batch_gradients<float>(params, batch, cfg.train.weights, nullptr, Execution::kSerial); }, 2);
  const double parallel = best_ms([&] { compute_batch_gradients<float>(params, batch, cfg.train.weights, nullptr, Execution::kParallel); }, 2);
  std::printf("batch gradients (32 samples, toy model)  serial %9.1f ms  parallel %9.1f ms  speedup %5.2fx\n", serial,
              parallel, serial / parallel);
}

}  // namespace

int main() {
  std::printf("OpenMP threads: %d\n", omp_get_max_threads());
  for (std::size_t s : {32, 64, 128, 256}) bench_gemm(s, s, s);
  bench_gemm(256, 64, 512);
  bench_batch();
}
