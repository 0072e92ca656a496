#include "cmanp/attention.hpp"

#include <cmath>
#include <limits>

#include "cmanp/instrument.hpp"

namespace cmanp {

namespace {
thread_local UpdatePath g_update_path = UpdatePath::kLogSpace;
}

void set_update_path(UpdatePath path) { g_update_path = path; }
UpdatePath update_path() { return g_update_path; }

double AttnConfig::scale() const { return 1.0 / std::sqrt(static_cast<double>(d_head())); }

void AttnConfig::validate() const {
  if (d_model < 1 || heads < 1 || d_model % heads != 0) {
    throw TensorError("attention config: heads must divide d_model, got d_model=" +
                      std::to_string(d_model) + " heads=" + std::to_string(heads));
  }
}

std::uint64_t AttnWeights::fingerprint() const {
  return fingerprint_tensors({&wq, &bq, &wk, &bk, &wv, &bv, &wo, &bo, &ln1_g, &ln1_b, &ln2_g,
                              &ln2_b, &ff_w1, &ff_b1, &ff_w2, &ff_b2});
}

AttnWeights init_attn_weights(const AttnConfig& cfg, std::int64_t d_ff, Rng& rng) {
  cfg.validate();
  const std::int64_t d = cfg.d_model;
  AttnWeights w;
  w.cfg = cfg;
  w.wq = xavier_uniform(d, d, rng);
  w.bq = Tensor::zeros({d});
  w.wk = xavier_uniform(d, d, rng);
  w.bk = Tensor::zeros({d});
  w.wv = xavier_uniform(d, d, rng);
  w.bv = Tensor::zeros({d});
  w.wo = xavier_uniform(d, d, rng);
  w.bo = Tensor::zeros({d});
  w.ln1_g = Tensor::full({d}, 1.0);
  w.ln1_b = Tensor::zeros({d});
  w.ln2_g = Tensor::full({d}, 1.0);
  w.ln2_b = Tensor::zeros({d});
  w.ff_w1 = xavier_uniform(d, d_ff, rng);
  w.ff_b1 = Tensor::zeros({d_ff});
  w.ff_w2 = xavier_uniform(d_ff, d, rng);
  w.ff_b2 = Tensor::zeros({d});
  return w;
}

// ---- projection-space core ----

AttnState attn_state_init(Tensor q_proj_scaled, std::uint64_t weights_fp) {
  if (q_proj_scaled.rank() != 3) {
    throw StateError("attention state: query projections must be [heads, L_q, d_head]");
  }
  AttnState s;
  s.emb = Tensor::zeros({q_proj_scaled.extent(0), q_proj_scaled.extent(1), q_proj_scaled.extent(2)});
  s.log_c = Tensor::zeros({q_proj_scaled.extent(0), q_proj_scaled.extent(1)});
  s.q_proj = std::move(q_proj_scaled);
  s.count = 0;
  s.weights_fp = weights_fp;
  return s;
}

namespace {

void check_kv_proj(const AttnState& state, const Tensor& k_proj, const Tensor& v_proj) {
  if (k_proj.rank() != 3 || !k_proj.same_shape(v_proj) || k_proj.extent(0) != state.heads() ||
      k_proj.extent(2) != state.d_head()) {
    throw StateError("absorb: key/value projections must be [heads, u, d_head]");
  }
}

}  // namespace

AttnState attn_state_absorb(const AttnState& state, const Tensor& k_proj, const Tensor& v_proj) {
  check_kv_proj(state, k_proj, v_proj);
  const std::int64_t heads = state.heads(), lq = state.l_q(), dh = state.d_head();
  const std::int64_t u = k_proj.extent(1);
  if (u == 0) return state;

  // Scores for the new rows only: [heads, L_q, u].
  const Tensor scores = bmm_nt(state.q_proj, k_proj);

  AttnState next;
  next.q_proj = state.q_proj;
  next.weights_fp = state.weights_fp;
  next.count = state.count + u;
  next.emb = Tensor::zeros({heads, lq, dh});
  next.log_c = Tensor::zeros({heads, lq});
  double* emb = next.emb.mutable_data();
  double* log_c = next.log_c.mutable_data();
  auto s = scores.data();
  auto v = v_proj.data();
  auto old_emb = state.emb.data();
  auto old_lc = state.log_c.data();

  for (std::int64_t h = 0; h < heads; ++h) {
    for (std::int64_t j = 0; j < lq; ++j) {
      const double* srow = s.data() + (h * lq + j) * u;
      const double lse = logsumexp({srow, static_cast<std::size_t>(u)});
      double lc_new;
      double* erow = emb + (h * lq + j) * dh;
      if (state.count == 0) {
        lc_new = lse;
      } else {
        const double lc_old = old_lc[h * lq + j];
        lc_new = lc_old + std::log1p(std::exp(-std::abs(lse - lc_old))) +
                 std::max(lse - lc_old, 0.0);  // lc_old + softplus(lse - lc_old)
        const double fade = std::exp(lc_old - lc_new);
        const double* eold = old_emb.data() + (h * lq + j) * dh;
        for (std::int64_t c = 0; c < dh; ++c) erow[c] = fade * eold[c];
      }
      for (std::int64_t i = 0; i < u; ++i) {
        const double wgt = std::exp(srow[i] - lc_new);
        const double* vrow = v.data() + (h * u + i) * dh;
        for (std::int64_t c = 0; c < dh; ++c) erow[c] += wgt * vrow[c];
      }
      log_c[h * lq + j] = lc_new;
    }
  }
  instr::add_madds(static_cast<std::uint64_t>(heads) * lq * (u * (dh + 1) + dh + 4));
  check_finite(next.emb, "attn_state_absorb");
  check_finite(next.log_c, "attn_state_absorb");
  return next;
}

AttnState attn_state_absorb_linear(const AttnState& state, const Tensor& k_proj,
                                   const Tensor& v_proj) {
  check_kv_proj(state, k_proj, v_proj);
  const std::int64_t heads = state.heads(), lq = state.l_q(), dh = state.d_head();
  const std::int64_t u = k_proj.extent(1);
  if (u == 0) return state;

  const Tensor scores = bmm_nt(state.q_proj, k_proj);

  AttnState next;
  next.q_proj = state.q_proj;
  next.weights_fp = state.weights_fp;
  next.count = state.count + u;
  next.emb = Tensor::zeros({heads, lq, dh});
  next.log_c = Tensor::zeros({heads, lq});
  double* emb = next.emb.mutable_data();
  double* log_c = next.log_c.mutable_data();
  auto s = scores.data();
  auto v = v_proj.data();
  auto old_emb = state.emb.data();
  auto old_lc = state.log_c.data();

  for (std::int64_t h = 0; h < heads; ++h) {
    for (std::int64_t j = 0; j < lq; ++j) {
      const double* srow = s.data() + (h * lq + j) * u;
      const double c_old = state.count == 0 ? 0.0 : std::exp(old_lc[h * lq + j]);
      double c_sum = 0.0;
      for (std::int64_t i = 0; i < u; ++i) c_sum += std::exp(srow[i]);
      const double c_new = c_old + c_sum;
      double* erow = emb + (h * lq + j) * dh;
      const double* eold = old_emb.data() + (h * lq + j) * dh;
      for (std::int64_t c = 0; c < dh; ++c) erow[c] = (c_old / c_new) * eold[c];
      for (std::int64_t i = 0; i < u; ++i) {
        const double wgt = std::exp(srow[i]) / c_new;
        const double* vrow = v.data() + (h * u + i) * dh;
        for (std::int64_t c = 0; c < dh; ++c) erow[c] += wgt * vrow[c];
      }
      log_c[h * lq + j] = std::log(c_new);
    }
  }
  instr::add_madds(static_cast<std::uint64_t>(heads) * lq * (u * (dh + 1) + dh + 4));
  return next;  // intentionally unchecked: this path is allowed to overflow
}

// ---- block level ----

namespace {

Tensor project_heads(const Tensor& x_norm, const Tensor& w, const Tensor& b, std::int64_t heads) {
  return split_heads(add_rowvec(matmul(x_norm, w), b), heads);
}

// Absorb already-normalized rows into a state without re-hashing the weights.
AttnState absorb_rows(const AttnState& state, const Tensor& rows, const AttnWeights& w) {
  const Tensor kn = layer_norm(rows, w.ln1_g, w.ln1_b);
  const Tensor k_proj = project_heads(kn, w.wk, w.bk, w.cfg.heads);
  const Tensor v_proj = project_heads(kn, w.wv, w.bv, w.cfg.heads);
  if (g_update_path == UpdatePath::kLinearSpace) {
    return attn_state_absorb_linear(state, k_proj, v_proj);
  }
  return attn_state_absorb(state, k_proj, v_proj);
}

void check_block_input(const Tensor& t, const AttnConfig& cfg, const char* what) {
  if (t.rank() != 2 || t.extent(1) != cfg.d_model) {
    throw TensorError(std::string(what) + ": expected [*, " + std::to_string(cfg.d_model) +
                      "], got " + shape_str(t.shape()));
  }
}

}  // namespace

AttnState make_cross_attn_state(const Tensor& q, const AttnWeights& w) {
  w.cfg.validate();
  check_block_input(q, w.cfg, "cross attention queries");
  if (q.extent(0) < 1) throw TensorError("cross attention with no query rows");
  const Tensor qn = layer_norm(q, w.ln1_g, w.ln1_b);
  Tensor q_proj = scale(project_heads(qn, w.wq, w.bq, w.cfg.heads), w.cfg.scale());
  return attn_state_init(std::move(q_proj), w.fingerprint());
}

Tensor state_finish(const AttnState& state, const Tensor& q, const AttnWeights& w) {
  if (state.count < 1) throw StateError("state_finish on a state with no absorbed rows");
  if (state.weights_fp != w.fingerprint()) {
    throw StateError("state_finish: weights differ from the ones that produced the state");
  }
  check_block_input(q, w.cfg, "state_finish queries");
  if (q.extent(0) != state.l_q()) throw StateError("state_finish: query row count mismatch");
  const Tensor attn = add_rowvec(matmul(merge_heads(state.emb), w.wo), w.bo);
  const Tensor h1 = add(q, attn);
  const Tensor h1n = layer_norm(h1, w.ln2_g, w.ln2_b);
  const Tensor ff = add_rowvec(
      matmul(relu(add_rowvec(matmul(h1n, w.ff_w1), w.ff_b1)), w.ff_w2), w.ff_b2);
  return add(h1, ff);
}

CrossAttnResult cross_attention_block(const Tensor& q, const Tensor& kv, const AttnWeights& w) {
  check_block_input(kv, w.cfg, "cross attention kv");
  if (kv.extent(0) < 1) throw TensorError("cross attention over empty kv rows");
  AttnState st = make_cross_attn_state(q, w);
  st = absorb_rows(st, kv, w);
  Tensor out = state_finish(st, q, w);
  return {std::move(out), std::move(st)};
}

Tensor self_attention_block(const Tensor& x, const AttnWeights& w) {
  w.cfg.validate();
  check_block_input(x, w.cfg, "self attention input");
  if (x.extent(0) < 1) throw TensorError("self attention over empty input");
  const Tensor xn = layer_norm(x, w.ln1_g, w.ln1_b);
  Tensor q_proj = scale(project_heads(xn, w.wq, w.bq, w.cfg.heads), w.cfg.scale());
  AttnState st = attn_state_init(std::move(q_proj), w.fingerprint());
  const Tensor k_proj = project_heads(xn, w.wk, w.bk, w.cfg.heads);
  const Tensor v_proj = project_heads(xn, w.wv, w.bv, w.cfg.heads);
  st = attn_state_absorb(st, k_proj, v_proj);
  return state_finish(st, x, w);
}

AttnState state_update(const AttnState& state, const Tensor& new_kv, const AttnWeights& w) {
  check_block_input(new_kv, w.cfg, "state_update kv");
  if (state.weights_fp != w.fingerprint()) {
    throw StateError("state_update: weights differ from the ones that produced the state");
  }
  if (new_kv.extent(0) == 0) {
    if (state.count == 0) throw StateError("state_update: empty update on an empty state");
    return state;
  }
  return absorb_rows(state, new_kv, w);
}

CrossAttnResult chunked_cross_attention(const Tensor& q, const Tensor& kv, const AttnWeights& w,
                                        std::int64_t chunk) {
  check_block_input(kv, w.cfg, "chunked cross attention kv");
  const std::int64_t n = kv.extent(0);
  if (n < 1) throw TensorError("chunked cross attention over empty kv rows");
  if (chunk < 1) throw TensorError("chunked cross attention: chunk size must be >= 1");
  if (n <= chunk) return cross_attention_block(q, kv, w);
  const KvChunkSource source = [&kv](std::int64_t r0, std::int64_t r1) {
    return slice_rows(kv, r0, r1);
  };
  return chunked_cross_attention(q, source, n, w, chunk);
}

CrossAttnResult chunked_cross_attention(const Tensor& q, const KvChunkSource& source,
                                        std::int64_t n_rows, const AttnWeights& w,
                                        std::int64_t chunk) {
  if (n_rows < 1) throw TensorError("chunked cross attention over empty kv rows");
  if (chunk < 1) throw TensorError("chunked cross attention: chunk size must be >= 1");
  AttnState st = make_cross_attn_state(q, w);
  for (std::int64_t r0 = 0; r0 < n_rows; r0 += chunk) {
    const std::int64_t r1 = std::min(r0 + chunk, n_rows);
    const Tensor rows = source(r0, r1);
    if (rows.rank() != 2 || rows.extent(0) != r1 - r0 || rows.extent(1) != w.cfg.d_model) {
      throw TensorError("kv chunk source returned shape " + shape_str(rows.shape()) +
                        " for rows [" + std::to_string(r0) + "," + std::to_string(r1) + ")");
    }
    st = absorb_rows(st, rows, w);
  }
  Tensor out = state_finish(st, q, w);
  return {std::move(out), std::move(st)};
}

// ---- differentiable mirror ----

AttnWeightsVar lift(const AttnWeights& w, bool leaf) {
  auto wrap = [leaf](const Tensor& t) { return leaf ? make_leaf(t) : make_constant(t); };
  AttnWeightsVar v;
  v.cfg = w.cfg;
  v.wq = wrap(w.wq); v.bq = wrap(w.bq);
  v.wk = wrap(w.wk); v.bk = wrap(w.bk);
  v.wv = wrap(w.wv); v.bv = wrap(w.bv);
  v.wo = wrap(w.wo); v.bo = wrap(w.bo);
  v.ln1_g = wrap(w.ln1_g); v.ln1_b = wrap(w.ln1_b);
  v.ln2_g = wrap(w.ln2_g); v.ln2_b = wrap(w.ln2_b);
  v.ff_w1 = wrap(w.ff_w1); v.ff_b1 = wrap(w.ff_b1);
  v.ff_w2 = wrap(w.ff_w2); v.ff_b2 = wrap(w.ff_b2);
  return v;
}

namespace {

Var project_heads(const Var& x_norm, const Var& w, const Var& b, std::int64_t heads) {
  return split_heads(add_rowvec(matmul(x_norm, w), b), heads);
}

Var attn_tail(const Var& q, const Var& raw, const AttnWeightsVar& w) {
  const Var attn = add_rowvec(matmul(merge_heads(raw), w.wo), w.bo);
  const Var h1 = add(q, attn);
  const Var h1n = layer_norm(h1, w.ln2_g, w.ln2_b);
  const Var ff = add_rowvec(
      matmul(relu(add_rowvec(matmul(h1n, w.ff_w1), w.ff_b1)), w.ff_w2), w.ff_b2);
  return add(h1, ff);
}

Var raw_attention(const Var& qn, const Var& kn, const AttnWeightsVar& w) {
  const Var qh = scale(project_heads(qn, w.wq, w.bq, w.cfg.heads), w.cfg.scale());
  const Var kh = project_heads(kn, w.wk, w.bk, w.cfg.heads);
  const Var vh = project_heads(kn, w.wv, w.bv, w.cfg.heads);
  const Var weights = softmax_last(bmm_nt(qh, kh));
  return bmm(weights, vh);
}

}  // namespace

Var self_attention_block(const Var& x, const AttnWeightsVar& w) {
  const Var xn = layer_norm(x, w.ln1_g, w.ln1_b);
  return attn_tail(x, raw_attention(xn, xn, w), w);
}

Var cross_attention_block(const Var& q, const Var& kv, const AttnWeightsVar& w) {
  if (kv.value().extent(0) < 1) throw TensorError("cross attention over empty kv rows");
  const Var qn = layer_norm(q, w.ln1_g, w.ln1_b);
  const Var kn = layer_norm(kv, w.ln1_g, w.ln1_b);
  return attn_tail(q, raw_attention(qn, kn, w), w);
}

}  // namespace cmanp
