#include <benchmark/benchmark.h>

#include "natmotion/data.hpp"
#include "natmotion/model.hpp"
#include "natmotion/training.hpp"

namespace {

using namespace natmotion;

struct Setup {
  Model model;
  Batch batch;
  TrainConfig cfg;

  Setup(std::size_t batch_size, std::size_t given, std::size_t horizon) {
    SyntheticSpec spec;
    spec.seqs_per_class = 4;
    Dataset data{generate_synthetic(spec), {"class0", "class1", "class2"}};
    cfg.given = given;
    cfg.horizon = horizon;
    const auto windows = make_windows(data.sequences, cfg.windows());
    std::vector<std::size_t> idx(batch_size);
    for (std::size_t i = 0; i < batch_size; ++i) idx[i] = i % windows.size();
    batch = make_batch(windows, idx);
    model = make_model(ModelKind::nat, model_config(cfg, data), 1);
  }
};

void BM_Predict(benchmark::State& state) {
  const Setup s(static_cast<std::size_t>(state.range(0)), 50, 25);
  for (auto _ : state) benchmark::DoNotOptimize(predict(s.model, s.batch.observed, 25));
}

void BM_TrainStep(benchmark::State& state) {
  Setup s(static_cast<std::size_t>(state.range(0)), static_cast<std::size_t>(state.range(1)),
          static_cast<std::size_t>(state.range(2)));
  s.cfg.lambda_cls = static_cast<double>(state.range(3)) / 100.0;
  for (auto _ : state) benchmark::DoNotOptimize(objective_gradients(s.model, s.batch, s.cfg));
}

BENCHMARK(BM_Predict)->Arg(1)->Arg(16)->Unit(benchmark::kMillisecond);
// batch, N, M, lambda_cls * 100
BENCHMARK(BM_TrainStep)->Args({8, 10, 10, 0})->Args({8, 10, 10, 1})->Args({16, 50, 25, 1})->Unit(benchmark::kMillisecond);

}  // namespace
