#include <doctest.h>

#include <cmath>
#include <numeric>
#include <vector>

#include "cmanp/attention.hpp"
#include "cmanp/instrument.hpp"
#include "test_util.hpp"

using namespace cmanp;
using cmanp::testing::rand_uniform;

namespace {

// Independent reference for the full pre-norm block, written with plain loops
// and the textbook max-subtracted softmax.
struct BlockOracle {
  const AttnWeights& w;

  std::vector<std::vector<double>> norm(const Tensor& x, const Tensor& g, const Tensor& b) const {
    const std::int64_t rows = x.extent(0), d = x.extent(1);
    std::vector<std::vector<double>> out(rows, std::vector<double>(d));
    for (std::int64_t r = 0; r < rows; ++r) {
      double mean = 0.0;
      for (std::int64_t j = 0; j < d; ++j) mean += x(r, j);
      mean /= static_cast<double>(d);
      double var = 0.0;
      for (std::int64_t j = 0; j < d; ++j) var += (x(r, j) - mean) * (x(r, j) - mean);
      var /= static_cast<double>(d);
      for (std::int64_t j = 0; j < d; ++j) {
        out[r][j] = (x(r, j) - mean) / std::sqrt(var + 1e-5) * g(j) + b(j);
      }
    }
    return out;
  }

  std::vector<std::vector<double>> affine(const std::vector<std::vector<double>>& x,
                                          const Tensor& wm, const Tensor& bv) const {
    const std::int64_t rows = static_cast<std::int64_t>(x.size());
    const std::int64_t in = wm.extent(0), out_w = wm.extent(1);
    std::vector<std::vector<double>> out(rows, std::vector<double>(out_w));
    for (std::int64_t r = 0; r < rows; ++r) {
      for (std::int64_t j = 0; j < out_w; ++j) {
        double acc = 0.0;
        for (std::int64_t k = 0; k < in; ++k) acc += x[r][k] * wm(k, j);
        out[r][j] = acc + bv(j);
      }
    }
    return out;
  }

  // Raw multi-head attention output (pre output-projection), [L_q][d_model].
  std::vector<std::vector<double>> raw_attention(const Tensor& q, const Tensor& kv) const {
    const std::int64_t heads = w.cfg.heads, dh = w.cfg.d_head();
    const double sc = w.cfg.scale();
    const auto qn = norm(q, w.ln1_g, w.ln1_b);
    const auto kn = norm(kv, w.ln1_g, w.ln1_b);
    const auto qp = affine(qn, w.wq, w.bq);
    const auto kp = affine(kn, w.wk, w.bk);
    const auto vp = affine(kn, w.wv, w.bv);
    const std::int64_t lq = q.extent(0), lk = kv.extent(0);
    std::vector<std::vector<double>> out(lq, std::vector<double>(w.cfg.d_model, 0.0));
    for (std::int64_t h = 0; h < heads; ++h) {
      for (std::int64_t i = 0; i < lq; ++i) {
        std::vector<double> scores(lk);
        double mx = -1e300;
        for (std::int64_t j = 0; j < lk; ++j) {
          double acc = 0.0;
          for (std::int64_t c = 0; c < dh; ++c) acc += qp[i][h * dh + c] * kp[j][h * dh + c];
          scores[j] = acc * sc;
          mx = std::max(mx, scores[j]);
        }
        double denom = 0.0;
        for (std::int64_t j = 0; j < lk; ++j) denom += std::exp(scores[j] - mx);
        for (std::int64_t j = 0; j < lk; ++j) {
          const double wgt = std::exp(scores[j] - mx) / denom;
          for (std::int64_t c = 0; c < dh; ++c) out[i][h * dh + c] += wgt * vp[j][h * dh + c];
        }
      }
    }
    return out;
  }

  Tensor block(const Tensor& q, const Tensor& kv) const {
    const auto raw = raw_attention(q, kv);
    const auto proj = affine(raw, w.wo, w.bo);
    const std::int64_t lq = q.extent(0), d = w.cfg.d_model;
    Tensor h1 = Tensor::zeros({lq, d});
    double* ph1 = h1.mutable_data();
    for (std::int64_t i = 0; i < lq; ++i)
      for (std::int64_t j = 0; j < d; ++j) ph1[i * d + j] = q(i, j) + proj[i][j];
    auto h1n = norm(h1, w.ln2_g, w.ln2_b);
    auto mid = affine(h1n, w.ff_w1, w.ff_b1);
    for (auto& row : mid)
      for (double& v : row) v = v > 0.0 ? v : 0.0;
    auto ff = affine(mid, w.ff_w2, w.ff_b2);
    Tensor out = Tensor::zeros({lq, d});
    double* po = out.mutable_data();
    for (std::int64_t i = 0; i < lq; ++i)
      for (std::int64_t j = 0; j < d; ++j) po[i * d + j] = h1(i, j) + ff[i][j];
    return out;
  }
};

AttnWeights test_weights(std::int64_t d_model, std::int64_t heads, std::uint64_t seed) {
  Rng rng(seed);
  return init_attn_weights(AttnConfig{d_model, heads}, 2 * d_model, rng);
}

Tensor projected_values(const Tensor& kv, const AttnWeights& w) {
  const Tensor kn = layer_norm(kv, w.ln1_g, w.ln1_b);
  return split_heads(add_rowvec(matmul(kn, w.wv), w.bv), w.cfg.heads);
}

Tensor concat_rows_of(const Tensor& a, const Tensor& b) {
  std::vector<double> data(a.data().begin(), a.data().end());
  data.insert(data.end(), b.data().begin(), b.data().end());
  return Tensor::from({a.extent(0) + b.extent(0), a.extent(1)}, std::move(data));
}

}  // namespace

TEST_SUITE_BEGIN("attention");

TEST_CASE("single token self-attention puts weight one on itself") {
  const AttnWeights w = test_weights(8, 2, 1);
  Rng rng(2);
  const Tensor x = rand_uniform(rng, {1, 8});
  const CrossAttnResult r = cross_attention_block(x, x, w);
  // Raw state must equal the value projection of the single row exactly.
  CHECK(bitwise_equal(r.state.emb, projected_values(x, w)));
  CHECK(r.state.count == 1);
  // And the log-normalizer is the single scaled score.
  const Tensor kn = layer_norm(x, w.ln1_g, w.ln1_b);
  const Tensor k_proj = split_heads(add_rowvec(matmul(kn, w.wk), w.bk), 2);
  const Tensor s = bmm_nt(r.state.q_proj, k_proj);
  CHECK(max_abs_diff(r.state.log_c, s.reshape({2, 1})) == 0.0);
  // Self-attention block is the cross block applied to itself.
  CHECK(bitwise_equal(self_attention_block(x, w), r.out));
}

TEST_CASE("permuting self-attention input permutes the output rows") {
  const AttnWeights w = test_weights(16, 4, 3);
  Rng rng(4);
  const Tensor x = rand_uniform(rng, {6, 16});
  const Tensor out = self_attention_block(x, w);
  const std::vector<std::int64_t> perm{3, 0, 5, 1, 4, 2};
  std::vector<double> px(6 * 16);
  for (std::int64_t i = 0; i < 6; ++i)
    for (std::int64_t j = 0; j < 16; ++j) px[i * 16 + j] = x(perm[i], j);
  const Tensor out_p = self_attention_block(Tensor::from({6, 16}, std::move(px)), w);
  for (std::int64_t i = 0; i < 6; ++i)
    for (std::int64_t j = 0; j < 16; ++j)
      CHECK(std::abs(out_p(i, j) - out(perm[i], j)) < 1e-12);
}

TEST_CASE("self-attention matches the naive per-head oracle") {
  const AttnWeights w = test_weights(12, 3, 5);
  Rng rng(6);
  const Tensor x = rand_uniform(rng, {7, 12});
  CHECK(max_abs_diff(self_attention_block(x, w), BlockOracle{w}.block(x, x)) < 1e-10);
}

TEST_CASE("one kv row makes the raw output that row's value vector") {
  const AttnWeights w = test_weights(8, 2, 7);
  Rng rng(8);
  const Tensor q = rand_uniform(rng, {3, 8});
  const Tensor kv = rand_uniform(rng, {1, 8});
  const CrossAttnResult r = cross_attention_block(q, kv, w);
  const Tensor vp = projected_values(kv, w);
  for (std::int64_t h = 0; h < 2; ++h)
    for (std::int64_t j = 0; j < 3; ++j)
      for (std::int64_t c = 0; c < 4; ++c)
        CHECK(r.state.emb(h, j, c) == vp(h, 0, c));
}

TEST_CASE("duplicating the kv row doubles the normalizer only") {
  const AttnWeights w = test_weights(8, 2, 9);
  Rng rng(10);
  const Tensor q = rand_uniform(rng, {2, 8});
  const Tensor kv = rand_uniform(rng, {1, 8});
  const CrossAttnResult one = cross_attention_block(q, kv, w);
  const CrossAttnResult two = cross_attention_block(q, concat_rows_of(kv, kv), w);
  CHECK(max_abs_diff(one.state.emb, two.state.emb) < 1e-12);
  const Tensor shifted = add_scalar(one.state.log_c, std::log(2.0));
  CHECK(max_abs_diff(shifted, two.state.log_c) < 1e-12);
}

TEST_CASE("cross attention matches the dense softmax oracle") {
  const AttnWeights w = test_weights(16, 4, 11);
  Rng rng(12);
  const Tensor q = rand_uniform(rng, {5, 16});
  const Tensor kv = rand_uniform(rng, {8, 16});
  const CrossAttnResult r = cross_attention_block(q, kv, w);
  const auto raw = BlockOracle{w}.raw_attention(q, kv);
  const Tensor merged = merge_heads(r.state.emb);
  for (std::int64_t i = 0; i < 5; ++i)
    for (std::int64_t j = 0; j < 16; ++j) CHECK(std::abs(merged(i, j) - raw[i][j]) < 1e-12);
  CHECK(max_abs_diff(r.out, BlockOracle{w}.block(q, kv)) < 1e-12);
}

TEST_CASE("empty kv is rejected") {
  const AttnWeights w = test_weights(8, 2, 13);
  Rng rng(14);
  const Tensor q = rand_uniform(rng, {2, 8});
  CHECK_THROWS_AS(cross_attention_block(q, Tensor::zeros({0, 8}), w), TensorError);
  CHECK_THROWS_AS(chunked_cross_attention(q, Tensor::zeros({0, 8}), w, 4), TensorError);
  const AttnState empty = make_cross_attn_state(q, w);
  CHECK_THROWS_AS(state_finish(empty, q, w), StateError);
}

TEST_CASE("zero-row update leaves the state bit-for-bit unchanged") {
  const AttnWeights w = test_weights(8, 2, 15);
  Rng rng(16);
  const Tensor q = rand_uniform(rng, {2, 8});
  const Tensor kv = rand_uniform(rng, {3, 8});
  const AttnState st = cross_attention_block(q, kv, w).state;
  const AttnState st2 = state_update(st, Tensor::zeros({0, 8}), w);
  CHECK(bitwise_equal(st.emb, st2.emb));
  CHECK(bitwise_equal(st.log_c, st2.log_c));
  CHECK(st.count == st2.count);
  CHECK_THROWS_AS(state_update(make_cross_attn_state(q, w), Tensor::zeros({0, 8}), w),
                  StateError);
}

TEST_CASE("update equals recomputation over the union") {
  Rng rng(17);
  for (int trial = 0; trial < 25; ++trial) {
    const AttnWeights w = test_weights(16, 4, 100 + static_cast<std::uint64_t>(trial));
    const std::int64_t n1 = rng.uniform_int(1, 65);
    const std::int64_t n2 = rng.uniform_int(1, 65);
    const Tensor q = rand_uniform(rng, {4, 16});
    const Tensor d1 = rand_uniform(rng, {n1, 16});
    const Tensor d2 = rand_uniform(rng, {n2, 16});
    const AttnState incremental = state_update(cross_attention_block(q, d1, w).state, d2, w);
    const AttnState direct = cross_attention_block(q, concat_rows_of(d1, d2), w).state;
    CHECK(max_abs_diff(incremental.emb, direct.emb) < 1e-10);
    CHECK(max_abs_diff(incremental.log_c, direct.log_c) < 1e-10);
    CHECK(incremental.count == direct.count);
    CHECK(max_abs_diff(state_finish(incremental, q, w), state_finish(direct, q, w)) < 1e-10);
  }
}

TEST_CASE("absorbing rows in any order gives the same state") {
  const AttnWeights w = test_weights(16, 4, 19);
  Rng rng(20);
  const Tensor q = rand_uniform(rng, {4, 16});
  const Tensor kv = rand_uniform(rng, {12, 16});
  const AttnState base = cross_attention_block(q, kv, w).state;
  std::vector<std::int64_t> order(12);
  std::iota(order.begin(), order.end(), 0);
  for (int trial = 0; trial < 5; ++trial) {
    for (std::size_t i = order.size(); i > 1; --i) {
      std::swap(order[i - 1], order[static_cast<std::size_t>(rng.uniform_int(0, i))]);
    }
    AttnState st = make_cross_attn_state(q, w);
    for (std::int64_t row : order) st = state_update(st, slice_rows(kv, row, row + 1), w);
    CHECK(max_abs_diff(st.emb, base.emb) < 1e-9);
    CHECK(max_abs_diff(st.log_c, base.log_c) < 1e-9);
  }
}

TEST_CASE("any chunking of the rows gives the same state") {
  const AttnWeights w = test_weights(16, 4, 21);
  Rng rng(22);
  const Tensor q = rand_uniform(rng, {4, 16});
  const Tensor kv = rand_uniform(rng, {23, 16});
  const AttnState base = cross_attention_block(q, kv, w).state;
  for (int trial = 0; trial < 5; ++trial) {
    AttnState st = make_cross_attn_state(q, w);
    std::int64_t r0 = 0;
    while (r0 < 23) {
      const std::int64_t r1 = std::min<std::int64_t>(23, r0 + rng.uniform_int(1, 8));
      st = state_update(st, slice_rows(kv, r0, r1), w);
      r0 = r1;
    }
    CHECK(max_abs_diff(st.emb, base.emb) < 1e-9);
    CHECK(max_abs_diff(st.log_c, base.log_c) < 1e-9);
  }
}

TEST_CASE("chunked evaluation collapses to the direct call when chunk >= n") {
  const AttnWeights w = test_weights(16, 4, 23);
  Rng rng(24);
  const Tensor q = rand_uniform(rng, {4, 16});
  const Tensor kv = rand_uniform(rng, {9, 16});
  const CrossAttnResult direct = cross_attention_block(q, kv, w);
  const CrossAttnResult chunked = chunked_cross_attention(q, kv, w, 16);
  CHECK(bitwise_equal(direct.out, chunked.out));
  CHECK(bitwise_equal(direct.state.emb, chunked.state.emb));
}

TEST_CASE("chunked evaluation matches direct for chunk 1 and non-dividing sizes") {
  const AttnWeights w = test_weights(16, 4, 25);
  Rng rng(26);
  const Tensor q = rand_uniform(rng, {4, 16});
  const Tensor kv = rand_uniform(rng, {7, 16});
  const CrossAttnResult direct = cross_attention_block(q, kv, w);
  for (std::int64_t chunk : {std::int64_t{1}, std::int64_t{3}}) {
    const CrossAttnResult c = chunked_cross_attention(q, kv, w, chunk);
    CHECK(max_abs_diff(c.out, direct.out) < 1e-10);
    CHECK(max_abs_diff(c.state.emb, direct.state.emb) < 1e-10);
    CHECK(max_abs_diff(c.state.log_c, direct.state.log_c) < 1e-10);
  }
}

TEST_CASE("finishing a state reproduces the block output deterministically") {
  const AttnWeights w = test_weights(16, 4, 27);
  Rng rng(28);
  const Tensor q = rand_uniform(rng, {4, 16});
  const Tensor kv = rand_uniform(rng, {6, 16});
  const CrossAttnResult r = cross_attention_block(q, kv, w);
  CHECK(bitwise_equal(state_finish(r.state, q, w), r.out));
  CHECK(bitwise_equal(state_finish(r.state, q, w), state_finish(r.state, q, w)));
  const Tensor more = rand_uniform(rng, {5, 16});
  const AttnState updated = state_update(r.state, more, w);
  const CrossAttnResult full = cross_attention_block(q, concat_rows_of(kv, more), w);
  CHECK(max_abs_diff(state_finish(updated, q, w), full.out) < 1e-10);
}

TEST_CASE("updates with changed weights are rejected") {
  AttnWeights w = test_weights(8, 2, 29);
  Rng rng(30);
  const Tensor q = rand_uniform(rng, {2, 8});
  const Tensor kv = rand_uniform(rng, {3, 8});
  const AttnState st = cross_attention_block(q, kv, w).state;
  AttnWeights w2 = w;
  w2.wq = add_scalar(w2.wq, 1e-9);
  CHECK_THROWS_AS(state_update(st, kv, w2), StateError);
  CHECK_THROWS_AS(state_finish(st, q, w2), StateError);
}

TEST_CASE("log-space absorption stays finite at score 700 where linear overflows") {
  // Projection-space construction with d_head 1: scores are exactly q * k.
  // One exp(700) is ~1e304, so the linear normalizer survives a few rows but
  // overflows once the stream accumulates enough of them; the log-space state
  // just sits at log C = 700 + log(count).
  const std::int64_t chunk = 2500, chunks = 8;
  const Tensor q_proj = Tensor::from({1, 1, 1}, {1.0});
  Tensor big_k = Tensor::zeros({1, chunk, 1});
  Tensor vals = Tensor::zeros({1, chunk, 1});
  double* pk = big_k.mutable_data();
  double* pv = vals.mutable_data();
  for (std::int64_t i = 0; i < chunk; ++i) {
    pk[i] = 700.0;
    pv[i] = (i % 2 == 0) ? 1.5 : -0.5;
  }
  AttnState stable = attn_state_init(q_proj, 0);
  AttnState naive = attn_state_init(q_proj, 0);
  for (std::int64_t c = 0; c < chunks; ++c) {
    stable = attn_state_absorb(stable, big_k, vals);
    naive = attn_state_absorb_linear(naive, big_k, vals);
  }
  CHECK(stable.emb.all_finite());
  CHECK(stable.log_c.all_finite());
  CHECK(stable.log_c(0, 0) ==
        doctest::Approx(700.0 + std::log(static_cast<double>(chunk * chunks))).epsilon(1e-12));
  CHECK_FALSE(naive.log_c.all_finite());
}

TEST_CASE("absorption matches an extended-precision oracle at score 50") {
  Rng rng(31);
  const std::int64_t u = 24, dh = 3;
  const Tensor q_proj = Tensor::from({1, 1, dh}, {1.0, 0.0, 0.0});
  Tensor k = Tensor::zeros({1, u, dh});
  Tensor v = Tensor::zeros({1, u, dh});
  double* pk = k.mutable_data();
  double* pv = v.mutable_data();
  for (std::int64_t i = 0; i < u; ++i) {
    pk[i * dh] = 50.0 + rng.uniform(-1.0, 1.0);  // score = k[0] by construction
    for (std::int64_t c = 0; c < dh; ++c) pv[i * dh + c] = rng.uniform(-2.0, 2.0);
  }
  AttnState st = attn_state_init(q_proj, 0);
  for (std::int64_t r0 = 0; r0 < u; r0 += 7) {
    const std::int64_t r1 = std::min(u, r0 + 7);
    Tensor kc = Tensor::zeros({1, r1 - r0, dh});
    Tensor vc = Tensor::zeros({1, r1 - r0, dh});
    std::copy(k.data().begin() + r0 * dh, k.data().begin() + r1 * dh, kc.mutable_data());
    std::copy(v.data().begin() + r0 * dh, v.data().begin() + r1 * dh, vc.mutable_data());
    st = attn_state_absorb(st, kc, vc);
  }
  // Long-double direct accumulation.
  long double denom = 0.0L;
  std::vector<long double> acc(dh, 0.0L);
  for (std::int64_t i = 0; i < u; ++i) {
    const long double e = std::exp(static_cast<long double>(k(0, i, 0)));
    denom += e;
    for (std::int64_t c = 0; c < dh; ++c) acc[c] += e * static_cast<long double>(v(0, i, c));
  }
  for (std::int64_t c = 0; c < dh; ++c) {
    const double ref = static_cast<double>(acc[c] / denom);
    CHECK(std::abs(st.emb(0, 0, c) - ref) / std::max(std::abs(ref), 1e-6) < 1e-6);
  }
  const double ref_lc = static_cast<double>(std::log(denom));
  CHECK(std::abs(st.log_c(0, 0) - ref_lc) / std::abs(ref_lc) < 1e-6);
}

TEST_CASE("chunked evaluation uses the same peak scratch for any input length") {
  const AttnWeights w = test_weights(32, 4, 33);
  Rng rng(34);
  const Tensor q = rand_uniform(rng, {8, 32});
  std::vector<std::uint64_t> peaks_chunked, peaks_direct;
  for (std::int64_t n : {256, 1024, 4096}) {
    const Tensor kv = rand_uniform(rng, {n, 32});
    {
      instr::ScratchScope scope;
      const CrossAttnResult r = chunked_cross_attention(q, kv, w, 32);
      CHECK(r.out.all_finite());
      peaks_chunked.push_back(scope.peak_scratch_bytes());
    }
    {
      instr::ScratchScope scope;
      const CrossAttnResult r = chunked_cross_attention(q, kv, w, n);  // chunking off
      CHECK(r.out.all_finite());
      peaks_direct.push_back(scope.peak_scratch_bytes());
    }
  }
  CHECK(peaks_chunked[0] == peaks_chunked[1]);
  CHECK(peaks_chunked[1] == peaks_chunked[2]);
  CHECK(peaks_direct[0] < peaks_direct[1]);
  CHECK(peaks_direct[1] < peaks_direct[2]);
  CHECK(peaks_chunked[2] < peaks_direct[2]);
}

TEST_CASE("state update cost is linear in the number of new rows") {
  const AttnWeights w = test_weights(64, 4, 35);
  Rng rng(36);
  const Tensor q = rand_uniform(rng, {32, 64});
  const AttnState st = cross_attention_block(q, rand_uniform(rng, {40, 64}), w).state;
  auto ops_for = [&](std::int64_t u) {
    const Tensor rows = rand_uniform(rng, {u, 64});
    const std::uint64_t before = instr::madds();
    (void)state_update(st, rows, w);
    return instr::madds() - before;
  };
  const std::uint64_t o64 = ops_for(64);
  const std::uint64_t o128 = ops_for(128);
  const std::uint64_t o256 = ops_for(256);
  const double r1 = static_cast<double>(o128) / static_cast<double>(o64);
  const double r2 = static_cast<double>(o256) / static_cast<double>(o128);
  CHECK(r1 >= 1.8);
  CHECK(r1 <= 2.2);
  CHECK(r2 >= 1.8);
  CHECK(r2 <= 2.2);
}

TEST_CASE("update cost does not depend on rows already absorbed") {
  const AttnWeights w = test_weights(32, 4, 37);
  Rng rng(38);
  const Tensor q = rand_uniform(rng, {8, 32});
  const Tensor rows = rand_uniform(rng, {16, 32});
  std::vector<std::uint64_t> costs;
  for (std::int64_t n : {100, 10000}) {
    const AttnState st = chunked_cross_attention(q, rand_uniform(rng, {n, 32}), w, 64).state;
    const std::uint64_t before = instr::madds();
    (void)state_update(st, rows, w);
    costs.push_back(instr::madds() - before);
  }
  CHECK(costs[0] == costs[1]);
}

TEST_CASE("recorded forward values are bitwise identical to the plain path") {
  const AttnWeights w = test_weights(16, 4, 39);
  Rng rng(40);
  const Tensor x = rand_uniform(rng, {6, 16});
  const Tensor q = rand_uniform(rng, {3, 16});
  const AttnWeightsVar wv = lift(w, /*leaf=*/false);
  CHECK(bitwise_equal(self_attention_block(make_constant(x), wv).value(),
                      self_attention_block(x, w)));
  CHECK(bitwise_equal(cross_attention_block(make_constant(q), make_constant(x), wv).value(),
                      cross_attention_block(q, x, w).out));
}

TEST_CASE("block gradients match finite differences") {
  const AttnWeights w = test_weights(8, 2, 41);
  Rng rng(42);
  const Tensor q = rand_uniform(rng, {3, 8}, -1.0, 1.0);
  const Tensor kv = rand_uniform(rng, {4, 8}, -1.0, 1.0);
  const Tensor probe = rand_uniform(rng, {3, 8});
  std::vector<Tensor> inputs{q,        kv,       w.wq,    w.bq,    w.wk,    w.bk,
                             w.wv,     w.bv,     w.wo,    w.bo,    w.ln1_g, w.ln1_b,
                             w.ln2_g,  w.ln2_b,  w.ff_w1, w.ff_b1, w.ff_w2, w.ff_b2};
  const AttnConfig cfg = w.cfg;
  const double err = cmanp::testing::max_fd_rel_error(
      inputs,
      [cfg, probe](const std::vector<Var>& v) {
        AttnWeightsVar wv;
        wv.cfg = cfg;
        wv.wq = v[2]; wv.bq = v[3]; wv.wk = v[4]; wv.bk = v[5];
        wv.wv = v[6]; wv.bv = v[7]; wv.wo = v[8]; wv.bo = v[9];
        wv.ln1_g = v[10]; wv.ln1_b = v[11]; wv.ln2_g = v[12]; wv.ln2_b = v[13];
        wv.ff_w1 = v[14]; wv.ff_b1 = v[15]; wv.ff_w2 = v[16]; wv.ff_b2 = v[17];
        return sum_all(mul(cross_attention_block(v[0], v[1], wv), make_constant(probe)));
      },
      1e-5, 12);
  CHECK(err < 1e-4);
}

TEST_SUITE_END();
