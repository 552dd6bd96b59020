// Serial reference vs OpenMP kernels. Thread count follows OMP_NUM_THREADS
// or DYNTASK_THREADS.

#include <benchmark/benchmark.h>

#include <random>
#include <vector>

#include "dyntask/kernels.hpp"

namespace k = dyntask::kernels;

namespace {

std::vector<double> filled(std::size_t n) {
  std::mt19937_64 rng(n);
  std::uniform_real_distribution<double> d(-1, 1);
  std::vector<double> v(n);
  for (double& x : v) x = d(rng);
  return v;
}

using GemmFn = void (*)(std::size_t, std::size_t, std::size_t, std::span<const double>, std::span<const double>,
                        std::span<double>);

template <GemmFn F>
void BM_gemm(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  auto a = filled(n * n), b = filled(n * n);
  std::vector<double> c(n * n);
  for (auto _ : state) {
    F(n, n, n, a, b, c);
    benchmark::DoNotOptimize(c.data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(2 * n * n * n));
}

k::ConvGeometry geometry(std::int64_t batch) {
  return {static_cast<std::size_t>(batch), 16, 32, 32, 3, 3, 1, 1};
}

template <bool Parallel>
void BM_im2col(benchmark::State& state) {
  const k::ConvGeometry g = geometry(state.range(0));
  auto img = filled(g.batch * g.channels * g.height * g.width);
  std::vector<double> cols(g.col_rows() * g.patch());
  for (auto _ : state) {
    if constexpr (Parallel) k::parallel::im2col(g, img, cols);
    else k::serial::im2col(g, img, cols);
    benchmark::DoNotOptimize(cols.data());
  }
}

template <bool Parallel>
void BM_col2im(benchmark::State& state) {
  const k::ConvGeometry g = geometry(state.range(0));
  auto cols = filled(g.col_rows() * g.patch());
  std::vector<double> img(g.batch * g.channels * g.height * g.width);
  for (auto _ : state) {
    if constexpr (Parallel) k::parallel::col2im(g, cols, img);
    else k::serial::col2im(g, cols, img);
    benchmark::DoNotOptimize(img.data());
  }
}

}  // namespace

BENCHMARK(BM_gemm<k::serial::gemm_nn>)->Name("gemm_nn/serial")->RangeMultiplier(2)->Range(64, 512);
BENCHMARK(BM_gemm<k::parallel::gemm_nn>)->Name("gemm_nn/parallel")->RangeMultiplier(2)->Range(64, 512);
BENCHMARK(BM_gemm<k::serial::gemm_tn>)->Name("gemm_tn/serial")->RangeMultiplier(2)->Range(64, 512);
BENCHMARK(BM_gemm<k::parallel::gemm_tn>)->Name("gemm_tn/parallel")->RangeMultiplier(2)->Range(64, 512);
BENCHMARK(BM_gemm<k::serial::gemm_nt>)->Name("gemm_nt/serial")->RangeMultiplier(2)->Range(64, 512);
BENCHMARK(BM_gemm<k::parallel::gemm_nt>)->Name("gemm_nt/parallel")->RangeMultiplier(2)->Range(64, 512);
BENCHMARK(BM_im2col<false>)->Name("im2col/serial")->Arg(8)->Arg(32);
BENCHMARK(BM_im2col<true>)->Name("im2col/parallel")->Arg(8)->Arg(32);
BENCHMARK(BM_col2im<false>)->Name("col2im/serial")->Arg(8)->Arg(32);
BENCHMARK(BM_col2im<true>)->Name("col2im/parallel")->Arg(8)->Arg(32);

int main(int argc, char** argv) {
  k::configure_threads_from_env();
  benchmark::Initialize(&argc, argv);
  if (benchmark::ReportUnrecognizedArguments(argc, argv)) return 1;
  benchmark::RunSpecifiedBenchmarks();
  benchmark::Shutdown();
  return 0;
}
