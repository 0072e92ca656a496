#include "cmanp/cmab.hpp"

namespace cmanp {

std::uint64_t CmabWeights::fingerprint() const {
  std::uint64_t h = fingerprint_tensors({&bemb});
  h ^= ca1.fingerprint() + 0x9e3779b97f4a7c15ULL + (h << 6) + (h >> 2);
  h ^= sa1.fingerprint() + 0x9e3779b97f4a7c15ULL + (h << 6) + (h >> 2);
  h ^= ca2.fingerprint() + 0x9e3779b97f4a7c15ULL + (h << 6) + (h >> 2);
  h ^= sa2.fingerprint() + 0x9e3779b97f4a7c15ULL + (h << 6) + (h >> 2);
  return h;
}

CmabWeights init_cmab_weights(std::int64_t l_b, const AttnConfig& cfg, std::int64_t d_ff,
                              Rng& rng) {
  if (l_b < 1) throw TensorError("cmab: L_B must be >= 1");
  CmabWeights w;
  w.bemb = normal_tensor({l_b, cfg.d_model}, 1.0, rng);
  w.ca1 = init_attn_weights(cfg, d_ff, rng);
  w.sa1 = init_attn_weights(cfg, d_ff, rng);
  w.ca2 = init_attn_weights(cfg, d_ff, rng);
  w.sa2 = init_attn_weights(cfg, d_ff, rng);
  return w;
}

namespace {

// The fixed-size remainder of the block once the first cross-attention state
// is known: finish CA1 on the block latents, then SA1, CA2, SA2.
CmabResult cmab_tail(AttnState ca1_state, const Tensor& iemb, const CmabWeights& w) {
  const Tensor ca1_out = state_finish(ca1_state, w.bemb, w.ca1);
  Tensor demb = self_attention_block(ca1_out, w.sa1);
  const Tensor ca2_out = cross_attention_block(iemb, demb, w.ca2).out;
  Tensor oemb = self_attention_block(ca2_out, w.sa2);
  CmabResult r;
  r.cache.ca1_state = std::move(ca1_state);
  r.cache.demb = std::move(demb);
  r.cache.oemb = oemb;
  r.cache.weights_fp = w.fingerprint();
  r.oemb = std::move(oemb);
  return r;
}

void check_iemb(const Tensor& iemb, const CmabWeights& w) {
  if (iemb.rank() != 2 || iemb.extent(1) != w.ca2.cfg.d_model || iemb.extent(0) < 1) {
    throw TensorError("cmab: input latents must be [L_I, d_model], got " +
                      shape_str(iemb.shape()));
  }
}

}  // namespace

CmabResult cmab_forward(const Tensor& iemb, const Tensor& input, const CmabWeights& w,
                        std::int64_t b_c) {
  check_iemb(iemb, w);
  if (input.extent(0) < 1) throw TensorError("cmab_forward over empty input");
  CrossAttnResult ca1 = chunked_cross_attention(w.bemb, input, w.ca1, b_c);
  return cmab_tail(std::move(ca1.state), iemb, w);
}

CmabResult cmab_forward(const Tensor& iemb, const KvChunkSource& source, std::int64_t n_rows,
                        const CmabWeights& w, std::int64_t b_c) {
  check_iemb(iemb, w);
  CrossAttnResult ca1 = chunked_cross_attention(w.bemb, source, n_rows, w.ca1, b_c);
  return cmab_tail(std::move(ca1.state), iemb, w);
}

CmabResult cmab_update(const CmabCache& cache, const Tensor& iemb, const Tensor& new_input,
                       const CmabWeights& w) {
  check_iemb(iemb, w);
  if (new_input.extent(0) < 1) throw TensorError("cmab_update with no new rows");
  if (cache.weights_fp != w.fingerprint()) {
    throw StateError("cmab_update: weights differ from the ones that produced the cache");
  }
  AttnState st = state_update(cache.ca1_state, new_input, w.ca1);
  return cmab_tail(std::move(st), iemb, w);
}

CmabStackResult cmab_stack_forward(const Tensor& lemb0, const Tensor& input,
                                   const std::vector<CmabWeights>& blocks, std::int64_t b_c) {
  if (blocks.empty()) throw TensorError("cmab stack: need at least one block");
  CmabStackResult r;
  r.lembs.push_back(lemb0);
  for (const CmabWeights& w : blocks) {
    CmabResult block = cmab_forward(r.lembs.back(), input, w, b_c);
    r.lembs.push_back(std::move(block.oemb));
    r.caches.push_back(std::move(block.cache));
  }
  return r;
}

CmabStackResult cmab_stack_forward(const Tensor& lemb0, const KvChunkSource& source,
                                   std::int64_t n_rows, const std::vector<CmabWeights>& blocks,
                                   std::int64_t b_c) {
  if (blocks.empty()) throw TensorError("cmab stack: need at least one block");
  if (n_rows < 1) throw TensorError("cmab stack forward over empty input");
  if (b_c < 1) throw TensorError("cmab stack: chunk size must be >= 1");

  // One pass over the rows; each block's CA1 state absorbs the same chunk, so
  // a chunk is produced once and released before the next.
  std::vector<AttnState> states;
  states.reserve(blocks.size());
  for (const CmabWeights& w : blocks) states.push_back(make_cross_attn_state(w.bemb, w.ca1));
  for (std::int64_t r0 = 0; r0 < n_rows; r0 += b_c) {
    const std::int64_t r1 = std::min(r0 + b_c, n_rows);
    const Tensor rows = source(r0, r1);
    for (std::size_t k = 0; k < blocks.size(); ++k) {
      states[k] = state_update(states[k], rows, blocks[k].ca1);
    }
  }

  CmabStackResult r;
  r.lembs.push_back(lemb0);
  for (std::size_t k = 0; k < blocks.size(); ++k) {
    CmabResult block = cmab_tail(std::move(states[k]), r.lembs.back(), blocks[k]);
    r.lembs.push_back(std::move(block.oemb));
    r.caches.push_back(std::move(block.cache));
  }
  return r;
}

CmabStackResult cmab_stack_update(const Tensor& lemb0, const std::vector<CmabCache>& caches,
                                  const Tensor& new_input,
                                  const std::vector<CmabWeights>& blocks) {
  if (caches.size() != blocks.size() || blocks.empty()) {
    throw TensorError("cmab stack update: cache/block count mismatch");
  }
  CmabStackResult r;
  r.lembs.push_back(lemb0);
  for (std::size_t k = 0; k < blocks.size(); ++k) {
    CmabResult block = cmab_update(caches[k], r.lembs.back(), new_input, blocks[k]);
    r.lembs.push_back(std::move(block.oemb));
    r.caches.push_back(std::move(block.cache));
  }
  return r;
}

// ---- differentiable mirror ----

CmabWeightsVar lift(const CmabWeights& w, bool leaf) {
  CmabWeightsVar v;
  v.bemb = leaf ? make_leaf(w.bemb) : make_constant(w.bemb);
  v.ca1 = lift(w.ca1, leaf);
  v.sa1 = lift(w.sa1, leaf);
  v.ca2 = lift(w.ca2, leaf);
  v.sa2 = lift(w.sa2, leaf);
  return v;
}

Var cmab_forward(const Var& iemb, const Var& input, const CmabWeightsVar& w) {
  const Var demb = self_attention_block(cross_attention_block(w.bemb, input, w.ca1), w.sa1);
  return self_attention_block(cross_attention_block(iemb, demb, w.ca2), w.sa2);
}

std::vector<Var> cmab_stack_forward(const Var& lemb0, const Var& input,
                                    const std::vector<CmabWeightsVar>& blocks) {
  std::vector<Var> lembs{lemb0};
  for (const CmabWeightsVar& w : blocks) {
    lembs.push_back(cmab_forward(lembs.back(), input, w));
  }
  return lembs;
}

}  // namespace cmanp
