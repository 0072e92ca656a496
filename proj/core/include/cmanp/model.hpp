#pragma once

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "cmanp/cmab.hpp"

namespace cmanp {

struct ModelConfig {
  std::int64_t k = 2;        // conditioning depth
  std::int64_t l_i = 32;     // input/output latents per block
  std::int64_t l_b = 32;     // block latents
  std::int64_t d_model = 64;
  std::int64_t heads = 4;
  std::int64_t b_c = 64;     // conditioning chunk size
  std::int64_t b_q = 5;      // autoregressive prediction block size
  std::int64_t rank = 4;     // low-rank covariance factors
  std::int64_t x_dim = 1;
  std::int64_t y_dim = 1;
  double var_floor = 0.01;
  std::int64_t ff_mult = 2;  // feed-forward width multiplier

  std::int64_t d_ff() const { return ff_mult * d_model; }
  void validate() const;
};

struct ModelParams {
  ModelConfig cfg;
  Tensor lemb0;  // [L_I, d_model], learned input latents of the first block
  MlpWeights ctx_embed;    // (x, y) pair -> d_model
  MlpWeights query_embed;  // x -> d_model
  std::vector<CmabWeights> blocks;        // K conditioning blocks
  std::vector<AttnWeights> query_blocks;  // K query-path cross-attentions
  MlpWeights head_diag;   // d_model -> (mean, raw variance)
  MlpWeights head_joint;  // d_model -> (mean, raw diag, rank factors)

  std::vector<std::pair<std::string, Tensor*>> named_leaves();
  std::vector<std::pair<std::string, const Tensor*>> named_leaves() const;
  std::uint64_t fingerprint() const;
};

ModelParams init_model_params(const ModelConfig& cfg, Rng& rng);

// Fixed-size encoding of a context dataset: the per-block latents plus the
// caches that let new pairs be absorbed without the original context.
struct ConditionedState {
  std::vector<Tensor> lembs;  // size K+1; lembs[0] is the learned input latents
  std::vector<CmabCache> caches;
  std::int64_t count = 0;
  std::uint64_t params_fp = 0;
};

Tensor embed_context_pairs(const ModelParams& p, const Tensor& xs, const Tensor& ys);

// Encodes N context pairs; pairs are embedded chunk by chunk inside the block
// fold, so peak scratch does not depend on N.
ConditionedState condition(const ModelParams& p, const Tensor& xs, const Tensor& ys);

// Absorbs new pairs into an existing encoding. Cost does not depend on how
// many pairs the state already holds and the original context is not needed.
ConditionedState update(const ModelParams& p, const ConditionedState& state, const Tensor& xs,
                        const Tensor& ys);

struct GaussianPred {
  Tensor mean;      // [M, y_dim]
  Tensor var;       // diagonal variant: [M, y_dim], entries >= var_floor
  Tensor low_rank;  // joint variant: [M*y_dim, rank]
  Tensor diag;      // joint variant: [M*y_dim], entries >= var_floor
  bool joint = false;
};

GaussianPred query_diagonal(const ModelParams& p, const ConditionedState& state,
                            const Tensor& xs);
GaussianPred query_joint(const ModelParams& p, const ConditionedState& state, const Tensor& xs);

// Sigma = low_rank low_rank^T + diag, [n,n] with n = M*y_dim.
Tensor covariance_matrix(const GaussianPred& pred);

// Mean negative log-likelihood per target point.
double gaussian_nll_diag(const GaussianPred& pred, const Tensor& ys);
double gaussian_nll_joint(const GaussianPred& pred, const Tensor& ys);

enum class AndMode { kSample, kMean };

struct AndResult {
  Tensor mean;      // [M, y_dim] block-wise predictive means
  Tensor feedback;  // [M, y_dim] values fed back as context (samples or means)
  std::vector<double> block_ll;  // per-block total log-likelihood of true ys
  double ll_per_point = 0.0;
  bool has_ll = false;
  std::int64_t n_blocks = 0;
};

// Autoregressive deployment: predicts targets in consecutive blocks of b_q
// points; each block's joint Gaussian conditions on the context plus the fed
// back predictions of earlier blocks. b_q_override 0 uses cfg.b_q.
AndResult predict_and(const ModelParams& p, const ConditionedState& state, const Tensor& xs,
                      Rng& rng, AndMode mode, const Tensor* ys = nullptr,
                      std::int64_t b_q_override = 0);

// ---- training graph ----

struct ModelParamsVar {
  ModelConfig cfg;
  Var lemb0;
  MlpWeightsVar ctx_embed, query_embed;
  std::vector<CmabWeightsVar> blocks;
  std::vector<AttnWeightsVar> query_blocks;
  MlpWeightsVar head_diag, head_joint;
  // Aligned with ModelParams::named_leaves() when lifted as leaves.
  std::vector<Var> leaves;
};

ModelParamsVar lift_params(const ModelParams& p, bool leaves);

struct GaussianPredVar {
  Var mean;
  Var var;
  Var low_rank;
  Var diag;
  bool joint = false;
};

GaussianPredVar query_diagonal_train(const ModelParamsVar& p, const Tensor& ctx_x,
                                     const Tensor& ctx_y, const Tensor& tgt_x);
GaussianPredVar query_joint_train(const ModelParamsVar& p, const Tensor& ctx_x,
                                  const Tensor& ctx_y, const Tensor& tgt_x);

Var gaussian_nll_diag(const GaussianPredVar& pred, const Tensor& ys);
Var gaussian_nll_joint(const GaussianPredVar& pred, const Tensor& ys);

Var model_nll_diag(const ModelParamsVar& p, const Tensor& ctx_x, const Tensor& ctx_y,
                   const Tensor& tgt_x, const Tensor& tgt_y);
Var model_nll_joint(const ModelParamsVar& p, const Tensor& ctx_x, const Tensor& ctx_y,
                    const Tensor& tgt_x, const Tensor& tgt_y);

}  // namespace cmanp
