// Compares the serial reference kernels against the OpenMP kernels on
// representative shapes. Run with --benchmark_filter=conv or =gemm to focus.
#include <benchmark/benchmark.h>

#include <vector>

#include "saq/kernels.hpp"
#include "saq/rng.hpp"

using namespace saq::kernels;

namespace {

std::vector<double> filled(std::size_t n, saq::RandomStream& rng) {
  std::vector<double> v(n);
  for (auto& x : v) x = rng.normal();
  return v;
}

Conv2dGeom conv_geom(int batch, int cin, int hw, int cout, int kernel, int stride,
                     int pad) {
  Conv2dGeom g;
  g.batch = batch;
  g.in_channels = cin;
  g.in_h = hw;
  g.in_w = hw;
  g.out_channels = cout;
  g.kernel = kernel;
  g.stride = stride;
  g.pad = pad;
  g.out_h = (hw + 2 * pad - kernel) / stride + 1;
  g.out_w = (hw + 2 * pad - kernel) / stride + 1;
  return g;
}

void bench_gemm(benchmark::State& state, bool parallel) {
  const int n = static_cast<int>(state.range(0));
  saq::RandomStream rng(1);
  auto a = filled(static_cast<std::size_t>(n) * n, rng);
  auto b = filled(static_cast<std::size_t>(n) * n, rng);
  std::vector<double> c(static_cast<std::size_t>(n) * n);
  for (auto _ : state) {
    if (parallel) {
      detail::gemm_omp(false, false, n, n, n, a.data(), b.data(), c.data());
    } else {
      detail::gemm_serial(false, false, n, n, n, a.data(), b.data(), c.data());
    }
    benchmark::DoNotOptimize(c.data());
  }
  state.SetItemsProcessed(state.iterations() * 2LL * n * n * n);
}

void bench_conv(benchmark::State& state, bool parallel) {
  const int c = static_cast<int>(state.range(0));
  auto g = conv_geom(4, c, 16, c, 3, 1, 1);
  saq::RandomStream rng(2);
  auto x = filled(static_cast<std::size_t>(g.batch) * g.in_channels * g.in_h * g.in_w, rng);
  auto w = filled(
      static_cast<std::size_t>(g.out_channels) * g.in_channels * g.kernel * g.kernel, rng);
  std::vector<double> y(static_cast<std::size_t>(g.batch) * g.out_channels * g.out_h *
                        g.out_w);
  for (auto _ : state) {
    if (parallel) {
      detail::conv2d_forward_omp(g, x.data(), w.data(), y.data());
    } else {
      detail::conv2d_forward_serial(g, x.data(), w.data(), y.data());
    }
    benchmark::DoNotOptimize(y.data());
  }
}

}  // namespace

BENCHMARK_CAPTURE(bench_gemm, serial, false)->Arg(64)->Arg(128)->Arg(256);
BENCHMARK_CAPTURE(bench_gemm, omp, true)->Arg(64)->Arg(128)->Arg(256);
BENCHMARK_CAPTURE(bench_conv, serial, false)->Arg(8)->Arg(16)->Arg(32);
BENCHMARK_CAPTURE(bench_conv, omp, true)->Arg(8)->Arg(16)->Arg(32);

BENCHMARK_MAIN();
