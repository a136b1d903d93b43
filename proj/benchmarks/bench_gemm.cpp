#include <benchmark/benchmark.h>

#include <vector>

#include "natmotion/gemm.hpp"

namespace {

using natmotion::Trans;

// Shapes of the heaviest encoder convolution (256 x 256 x 9 kernel, T*J = 80
// columns per sample) in its forward, weight-gradient and input-gradient form.
void run(benchmark::State& state, Trans ta, Trans tb) {
  const auto m = static_cast<std::size_t>(state.range(0));
  const auto n = static_cast<std::size_t>(state.range(1));
  const auto k = static_cast<std::size_t>(state.range(2));
  std::vector<double> a(m * k, 0.5), b(k * n, 0.25), c(m * n);
  const std::size_t lda = ta == Trans::no ? k : m;
  const std::size_t ldb = tb == Trans::no ? n : k;
  for (auto _ : state) {
    natmotion::gemm(ta, tb, m, n, k, a.data(), lda, b.data(), ldb, c.data(), n);
    benchmark::DoNotOptimize(c.data());
  }
  state.counters["flops"] = benchmark::Counter(2.0 * static_cast<double>(m * n * k), benchmark::Counter::kIsIterationInvariantRate);
}

void BM_GemmNN(benchmark::State& s) { run(s, Trans::no, Trans::no); }
void BM_GemmNT(benchmark::State& s) { run(s, Trans::no, Trans::yes); }
void BM_GemmTN(benchmark::State& s) { run(s, Trans::yes, Trans::no); }

BENCHMARK(BM_GemmNN)->Args({256, 80, 2304})->Args({256, 640, 2304})->Args({64, 64, 64});
BENCHMARK(BM_GemmNT)->Args({256, 2304, 80});
BENCHMARK(BM_GemmTN)->Args({2304, 80, 256});

}  // namespace
