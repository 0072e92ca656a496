#pragma once

#include <cstdint>
#include <functional>

#include "cmanp/rng.hpp"
#include "cmanp/tensor.hpp"
#include "cmanp/var_ops.hpp"

namespace cmanp {

class StateError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct AttnConfig {
  std::int64_t d_model = 64;
  std::int64_t heads = 4;

  std::int64_t d_head() const { return d_model / heads; }
  double scale() const;
  void validate() const;  // heads must divide d_model
};

// Pre-norm transformer block weights: attention projections, two layer norms
// and the feed-forward tail.
struct AttnWeights {
  AttnConfig cfg;
  Tensor wq, bq, wk, bk, wv, bv, wo, bo;
  Tensor ln1_g, ln1_b, ln2_g, ln2_b;
  Tensor ff_w1, ff_b1, ff_w2, ff_b2;

  std::uint64_t fingerprint() const;
};

AttnWeights init_attn_weights(const AttnConfig& cfg, std::int64_t d_ff, Rng& rng);

// Running attention result of one cross-attention: per (head, query slot) the
// weighted value sum and the log-normalizer over everything absorbed so far.
// q_proj holds the pre-scaled query projections, so scores are plain dot
// products against projected keys. A state with count == 0 may only be
// appended to.
struct AttnState {
  Tensor q_proj;  // [heads, L_q, d_head], scaled by 1/sqrt(d_head)
  Tensor emb;     // [heads, L_q, d_head]
  Tensor log_c;   // [heads, L_q]
  std::int64_t count = 0;
  std::uint64_t weights_fp = 0;

  std::int64_t heads() const { return q_proj.extent(0); }
  std::int64_t l_q() const { return q_proj.extent(1); }
  std::int64_t d_head() const { return q_proj.extent(2); }
};

// ---- projection-space core ----

AttnState attn_state_init(Tensor q_proj_scaled, std::uint64_t weights_fp);

// Absorbs projected key/value rows [heads, u, d_head] in log space:
//   log C' = log C + softplus(logsumexp(s) - log C)
//   emb'   = exp(log C - log C') emb + sum_i exp(s_i - log C') v_i
AttnState attn_state_absorb(const AttnState& state, const Tensor& k_proj, const Tensor& v_proj);

// Reference rolling average in linear space (C' = C + sum exp(s_i)). Overflows
// for large scores; kept as the comparison target for the stability checks and
// deliberately unchecked for finiteness.
AttnState attn_state_absorb_linear(const AttnState& state, const Tensor& k_proj,
                                   const Tensor& v_proj);

// Which absorb path block-level updates route through. Thread-local; the
// linear path exists so a fault-injection run can demonstrate that the
// verification suite catches an unstabilized implementation.
enum class UpdatePath { kLogSpace, kLinearSpace };
void set_update_path(UpdatePath path);
UpdatePath update_path();

// ---- block level ----

struct CrossAttnResult {
  Tensor out;       // [L_q, d_model]
  AttnState state;  // raw attention state, pre output-projection
};

// x + MHA(LN(x), LN(x)) followed by + FFN(LN(.)).
Tensor self_attention_block(const Tensor& x, const AttnWeights& w);

// Query-residual block over raw cross attention; the returned state together
// with state_finish reproduces `out`.
CrossAttnResult cross_attention_block(const Tensor& q, const Tensor& kv, const AttnWeights& w);

// Empty state bound to (q, w); append rows with state_update.
AttnState make_cross_attn_state(const Tensor& q, const AttnWeights& w);

// Absorbs new kv rows into the state. Cost is proportional to the number of
// new rows; previously absorbed rows are never touched. Rejects states whose
// weight fingerprint does not match `w`.
AttnState state_update(const AttnState& state, const Tensor& new_kv, const AttnWeights& w);

// Applies the constant-size output projection, residual and feed-forward tail
// to a state. Requires count >= 1.
Tensor state_finish(const AttnState& state, const Tensor& q, const AttnWeights& w);

// Produces kv rows [r0, r1) on demand so callers can keep per-chunk scratch
// bounded instead of materializing all rows at once.
using KvChunkSource = std::function<Tensor(std::int64_t r0, std::int64_t r1)>;

// Equivalent to cross_attention_block but evaluated by folding state updates
// over ceil(n / chunk) chunks; peak scratch depends on (L_q, chunk, d_model)
// only. chunk >= n collapses to the direct call.
CrossAttnResult chunked_cross_attention(const Tensor& q, const Tensor& kv, const AttnWeights& w,
                                        std::int64_t chunk);
CrossAttnResult chunked_cross_attention(const Tensor& q, const KvChunkSource& source,
                                        std::int64_t n_rows, const AttnWeights& w,
                                        std::int64_t chunk);

// ---- differentiable mirror (dense attention, used for training) ----

struct AttnWeightsVar {
  AttnConfig cfg;
  Var wq, bq, wk, bk, wv, bv, wo, bo;
  Var ln1_g, ln1_b, ln2_g, ln2_b;
  Var ff_w1, ff_b1, ff_w2, ff_b2;
};

AttnWeightsVar lift(const AttnWeights& w, bool leaf);

Var self_attention_block(const Var& x, const AttnWeightsVar& w);
Var cross_attention_block(const Var& q, const Var& kv, const AttnWeightsVar& w);

}  // namespace cmanp
