// Serial reference vs OpenMP kernels. Run with --benchmark_filter to pick
// one family; set OMP_NUM_THREADS to vary the parallel width.

#include <random>
#include <vector>

#include <benchmark/benchmark.h>

#include "nd/features.hpp"
#include "nd/kernels.hpp"
#include "nd/model.hpp"

namespace {

std::vector<double> random_vec(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g;
  std::vector<double> v(n);
  for (double& x : v) x = g(rng);
  return v;
}

// Shapes: n rows (batch x steps), k inner, m outputs.
template <bool Parallel>
void BM_GemmNN(benchmark::State& st) {
  const auto n = static_cast<std::size_t>(st.range(0)), k = static_cast<std::size_t>(st.range(1)),
             m = static_cast<std::size_t>(st.range(2));
  const auto a = random_vec(n * k, 1), b = random_vec(k * m, 2);
  std::vector<double> c(n * m);
  for (auto _ : st) {
    if constexpr (Parallel)
      nd::kernels::gemm_nn(a.data(), k, b.data(), m, c.data(), m, n, k, m, false);
    else
      nd::kernels::serial::gemm_nn(a.data(), k, b.data(), m, c.data(), m, n, k, m, false);
    benchmark::DoNotOptimize(c.data());
  }
  st.counters["MFLOP/s"] = benchmark::Counter(2.0 * n * k * m, benchmark::Counter::kIsIterationInvariantRate,
                                              benchmark::Counter::kIs1000);
}

template <bool Parallel>
void BM_GemmTN(benchmark::State& st) {
  const auto n = static_cast<std::size_t>(st.range(0)), k = static_cast<std::size_t>(st.range(1)),
             m = static_cast<std::size_t>(st.range(2));
  const auto a = random_vec(n * k, 3), b = random_vec(n * m, 4);
  std::vector<double> c(k * m);
  for (auto _ : st) {
    if constexpr (Parallel)
      nd::kernels::gemm_tn_acc(a.data(), k, b.data(), m, c.data(), m, n, k, m);
    else
      nd::kernels::serial::gemm_tn_acc(a.data(), k, b.data(), m, c.data(), m, n, k, m);
    benchmark::DoNotOptimize(c.data());
  }
}

template <bool Parallel>
void BM_GemmNT(benchmark::State& st) {
  const auto n = static_cast<std::size_t>(st.range(0)), m = static_cast<std::size_t>(st.range(1)),
             k = static_cast<std::size_t>(st.range(2));
  const auto a = random_vec(n * m, 5), b = random_vec(k * m, 6);
  std::vector<double> c(n * k);
  for (auto _ : st) {
    if constexpr (Parallel)
      nd::kernels::gemm_nt(a.data(), m, b.data(), m, c.data(), k, n, m, k, false);
    else
      nd::kernels::serial::gemm_nt(a.data(), m, b.data(), m, c.data(), k, n, m, k, false);
    benchmark::DoNotOptimize(c.data());
  }
}

// 16 channels, 500-sample windows, one column per 100 samples.
template <bool Parallel>
void BM_ExtractColumns(benchmark::State& st) {
  const auto columns = static_cast<std::size_t>(st.range(0));
  constexpr std::size_t channels = 16, window = 500, hop = 100;
  const std::size_t len = window + hop * columns;
  std::vector<std::vector<double>> data;
  std::vector<std::span<const double>> spans;
  for (std::size_t c = 0; c < channels; ++c) data.push_back(random_vec(len, 10 + c));
  for (const auto& d : data) spans.emplace_back(d);
  std::vector<std::size_t> ends;
  for (std::size_t i = 0; i < columns; ++i) ends.push_back(window + hop * i);
  std::vector<double> out(columns * channels * nd::kFeatureCount);
  const nd::FeatureThresholds thr;
  for (auto _ : st) {
    if constexpr (Parallel)
      nd::kernels::extract_columns(spans, 0, ends, window, thr, out);
    else
      nd::kernels::serial::extract_columns(spans, 0, ends, window, thr, out);
    benchmark::DoNotOptimize(out.data());
  }
  st.SetItemsProcessed(static_cast<std::int64_t>(st.iterations() * columns));
}

// One eval-mode forward of the default model (uses the parallel kernels).
void BM_ForwardDefault(benchmark::State& st) {
  const nd::ModelConfig cfg;
  nd::ModelParams p(cfg);
  std::mt19937_64 rng(1);
  p.init_uniform(rng);
  const auto x = random_vec(cfg.input_rows * cfg.steps, 7);
  for (auto _ : st) benchmark::DoNotOptimize(nd::forward({x.data(), cfg.input_rows, cfg.steps}, p));
}

void gemm_shapes(benchmark::internal::Benchmark* b) {
  b->Args({50, 224, 768})->Args({1600, 256, 768})->Args({64, 64, 6})->Unit(benchmark::kMicrosecond);
}

}  // namespace

BENCHMARK(BM_GemmNN<false>)->Name("gemm_nn/serial")->Apply(gemm_shapes);
BENCHMARK(BM_GemmNN<true>)->Name("gemm_nn/parallel")->Apply(gemm_shapes);
BENCHMARK(BM_GemmTN<false>)->Name("gemm_tn_acc/serial")->Apply(gemm_shapes);
BENCHMARK(BM_GemmTN<true>)->Name("gemm_tn_acc/parallel")->Apply(gemm_shapes);
BENCHMARK(BM_GemmNT<false>)->Name("gemm_nt/serial")->Apply(gemm_shapes);
BENCHMARK(BM_GemmNT<true>)->Name("gemm_nt/parallel")->Apply(gemm_shapes);
BENCHMARK(BM_ExtractColumns<false>)->Name("extract_columns/serial")->Arg(1)->Arg(64)->Unit(benchmark::kMicrosecond);
BENCHMARK(BM_ExtractColumns<true>)->Name("extract_columns/parallel")->Arg(1)->Arg(64)->Unit(benchmark::kMicrosecond);
BENCHMARK(BM_ForwardDefault)->Unit(benchmark::kMicrosecond);
BENCHMARK_MAIN();
