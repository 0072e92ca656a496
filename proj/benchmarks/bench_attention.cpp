#include <benchmark/benchmark.h>

#include "cmanp/attention.hpp"

using namespace cmanp;

namespace {

Tensor rand_rows(Rng& rng, std::int64_t n, std::int64_t d) {
  Tensor t = Tensor::zeros({n, d});
  double* p = t.mutable_data();
  for (std::int64_t i = 0; i < t.numel(); ++i) p[i] = rng.uniform(-2.0, 2.0);
  return t;
}

AttnWeights bench_weights() {
  Rng rng(1);
  return init_attn_weights(AttnConfig{64, 4}, 128, rng);
}

}  // namespace

static void BM_CrossAttentionDirect(benchmark::State& state) {
  const AttnWeights w = bench_weights();
  Rng rng(2);
  const Tensor q = rand_rows(rng, 32, 64);
  const Tensor kv = rand_rows(rng, state.range(0), 64);
  for (auto _ : state) {
    benchmark::DoNotOptimize(cross_attention_block(q, kv, w));
  }
  state.SetComplexityN(state.range(0));
}
BENCHMARK(BM_CrossAttentionDirect)->RangeMultiplier(4)->Range(64, 4096)->Complexity();

static void BM_CrossAttentionChunked(benchmark::State& state) {
  const AttnWeights w = bench_weights();
  Rng rng(3);
  const Tensor q = rand_rows(rng, 32, 64);
  const Tensor kv = rand_rows(rng, state.range(0), 64);
  for (auto _ : state) {
    benchmark::DoNotOptimize(chunked_cross_attention(q, kv, w, 64));
  }
  state.SetComplexityN(state.range(0));
}
BENCHMARK(BM_CrossAttentionChunked)->RangeMultiplier(4)->Range(64, 4096)->Complexity();

static void BM_StateUpdate(benchmark::State& state) {
  const AttnWeights w = bench_weights();
  Rng rng(4);
  const Tensor q = rand_rows(rng, 32, 64);
  const AttnState st = cross_attention_block(q, rand_rows(rng, 256, 64), w).state;
  const Tensor rows = rand_rows(rng, state.range(0), 64);
  for (auto _ : state) {
    benchmark::DoNotOptimize(state_update(st, rows, w));
  }
  state.SetComplexityN(state.range(0));
}
BENCHMARK(BM_StateUpdate)->RangeMultiplier(2)->Range(16, 512)->Complexity();
