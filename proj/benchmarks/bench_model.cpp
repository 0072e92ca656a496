#include <benchmark/benchmark.h>

#include "cmanp/model.hpp"

using namespace cmanp;

namespace {

Tensor rand_rows(Rng& rng, std::int64_t n, std::int64_t d) {
  Tensor t = Tensor::zeros({n, d});
  double* p = t.mutable_data();
  for (std::int64_t i = 0; i < t.numel(); ++i) p[i] = rng.uniform(-2.0, 2.0);
  return t;
}

const ModelParams& bench_params() {
  static const ModelParams params = [] {
    Rng rng(1);
    return init_model_params(ModelConfig{}, rng);
  }();
  return params;
}

}  // namespace

static void BM_Condition(benchmark::State& state) {
  const ModelParams& p = bench_params();
  Rng rng(2);
  const Tensor xs = rand_rows(rng, state.range(0), 1);
  const Tensor ys = rand_rows(rng, state.range(0), 1);
  for (auto _ : state) {
    benchmark::DoNotOptimize(condition(p, xs, ys));
  }
  state.SetComplexityN(state.range(0));
}
BENCHMARK(BM_Condition)->RangeMultiplier(4)->Range(64, 4096)->Complexity();

static void BM_Update(benchmark::State& state) {
  const ModelParams& p = bench_params();
  Rng rng(3);
  const ConditionedState st = condition(p, rand_rows(rng, 512, 1), rand_rows(rng, 512, 1));
  const Tensor ux = rand_rows(rng, state.range(0), 1);
  const Tensor uy = rand_rows(rng, state.range(0), 1);
  for (auto _ : state) {
    benchmark::DoNotOptimize(update(p, st, ux, uy));
  }
  state.SetComplexityN(state.range(0));
}
BENCHMARK(BM_Update)->RangeMultiplier(2)->Range(1, 64)->Complexity();

static void BM_QueryDiagonal(benchmark::State& state) {
  const ModelParams& p = bench_params();
  Rng rng(4);
  const ConditionedState st = condition(p, rand_rows(rng, 64, 1), rand_rows(rng, 64, 1));
  const Tensor tx = rand_rows(rng, state.range(0), 1);
  for (auto _ : state) {
    benchmark::DoNotOptimize(query_diagonal(p, st, tx));
  }
  state.SetComplexityN(state.range(0));
}
BENCHMARK(BM_QueryDiagonal)->RangeMultiplier(4)->Range(4, 256)->Complexity();

BENCHMARK_MAIN();
