#pragma once

#include <vector>

#include "cmanp/attention.hpp"

namespace cmanp {

// One block: two cross-attentions and two self-attentions routed through L_B
// learned latents, so the output is a fixed-size encoding of arbitrarily many
// input rows.
struct CmabWeights {
  Tensor bemb;  // [L_B, d_model], learned block latents
  AttnWeights ca1, sa1, ca2, sa2;

  std::uint64_t fingerprint() const;
};

CmabWeights init_cmab_weights(std::int64_t l_b, const AttnConfig& cfg, std::int64_t d_ff,
                              Rng& rng);

// Everything needed to extend a block's output with new rows without touching
// the rows already absorbed: the raw first-cross-attention state plus the
// fixed-size intermediates for reference.
struct CmabCache {
  AttnState ca1_state;
  Tensor demb;  // [L_B, d_model]
  Tensor oemb;  // [L_I, d_model]
  std::uint64_t weights_fp = 0;
};

struct CmabResult {
  Tensor oemb;
  CmabCache cache;
};

// SA(CA(iemb, SA(CA(bemb, input)))). The first cross-attention is evaluated in
// chunks of `b_c` rows so peak scratch is independent of the input length.
CmabResult cmab_forward(const Tensor& iemb, const Tensor& input, const CmabWeights& w,
                        std::int64_t b_c);
CmabResult cmab_forward(const Tensor& iemb, const KvChunkSource& source, std::int64_t n_rows,
                        const CmabWeights& w, std::int64_t b_c);

// Absorbs new rows into the cached first-cross-attention state and replays the
// fixed-size tail; equivalent to a forward pass over the union of old and new
// rows, at cost proportional to the new rows only.
CmabResult cmab_update(const CmabCache& cache, const Tensor& iemb, const Tensor& new_input,
                       const CmabWeights& w);

struct CmabStackResult {
  std::vector<Tensor> lembs;      // lembs[0] = input latents, lembs[i] = block i output
  std::vector<CmabCache> caches;  // one per block
};

CmabStackResult cmab_stack_forward(const Tensor& lemb0, const Tensor& input,
                                   const std::vector<CmabWeights>& blocks, std::int64_t b_c);
// Single pass over the source: every block's first cross-attention absorbs the
// same chunks, so the rows are produced once and never materialized in full.
CmabStackResult cmab_stack_forward(const Tensor& lemb0, const KvChunkSource& source,
                                   std::int64_t n_rows, const std::vector<CmabWeights>& blocks,
                                   std::int64_t b_c);

// Block i consumes the updated output of block i-1 as its input latents and
// absorbs the new rows into its own state.
CmabStackResult cmab_stack_update(const Tensor& lemb0, const std::vector<CmabCache>& caches,
                                  const Tensor& new_input,
                                  const std::vector<CmabWeights>& blocks);

// ---- differentiable mirror (dense, cache-free) ----

struct CmabWeightsVar {
  Var bemb;
  AttnWeightsVar ca1, sa1, ca2, sa2;
};

CmabWeightsVar lift(const CmabWeights& w, bool leaf);

Var cmab_forward(const Var& iemb, const Var& input, const CmabWeightsVar& w);
std::vector<Var> cmab_stack_forward(const Var& lemb0, const Var& input,
                                    const std::vector<CmabWeightsVar>& blocks);

}  // namespace cmanp
