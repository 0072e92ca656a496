#include "cmanp/model.hpp"

#include <cmath>
#include <numbers>
#include <unordered_map>

namespace cmanp {

namespace {
constexpr double kLog2Pi = 1.8378770664093454836;  // log(2*pi)
}

void ModelConfig::validate() const {
  AttnConfig{d_model, heads}.validate();
  if (k < 1 || l_i < 1 || l_b < 1 || b_c < 1 || b_q < 1 || rank < 1 || x_dim < 1 || y_dim < 1 ||
      ff_mult < 1) {
    throw TensorError("model config: all structural sizes must be positive");
  }
  if (!(var_floor > 0.0) || var_floor >= 1.0) {
    throw TensorError("model config: variance floor must lie in (0, 1)");
  }
}

std::vector<std::pair<std::string, Tensor*>> ModelParams::named_leaves() {
  std::vector<std::pair<std::string, Tensor*>> out;
  auto add_mlp = [&out](const std::string& prefix, MlpWeights& m) {
    for (std::size_t i = 0; i < m.w.size(); ++i) {
      out.emplace_back(prefix + ".w" + std::to_string(i), &m.w[i]);
      out.emplace_back(prefix + ".b" + std::to_string(i), &m.b[i]);
    }
  };
  auto add_attn = [&out](const std::string& prefix, AttnWeights& w) {
    out.emplace_back(prefix + ".wq", &w.wq);
    out.emplace_back(prefix + ".bq", &w.bq);
    out.emplace_back(prefix + ".wk", &w.wk);
    out.emplace_back(prefix + ".bk", &w.bk);
    out.emplace_back(prefix + ".wv", &w.wv);
    out.emplace_back(prefix + ".bv", &w.bv);
    out.emplace_back(prefix + ".wo", &w.wo);
    out.emplace_back(prefix + ".bo", &w.bo);
    out.emplace_back(prefix + ".ln1_g", &w.ln1_g);
    out.emplace_back(prefix + ".ln1_b", &w.ln1_b);
    out.emplace_back(prefix + ".ln2_g", &w.ln2_g);
    out.emplace_back(prefix + ".ln2_b", &w.ln2_b);
    out.emplace_back(prefix + ".ff_w1", &w.ff_w1);
    out.emplace_back(prefix + ".ff_b1", &w.ff_b1);
    out.emplace_back(prefix + ".ff_w2", &w.ff_w2);
    out.emplace_back(prefix + ".ff_b2", &w.ff_b2);
  };
  out.emplace_back("lemb0", &lemb0);
  add_mlp("ctx_embed", ctx_embed);
  add_mlp("query_embed", query_embed);
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    const std::string prefix = "cmab" + std::to_string(i);
    out.emplace_back(prefix + ".bemb", &blocks[i].bemb);
    add_attn(prefix + ".ca1", blocks[i].ca1);
    add_attn(prefix + ".sa1", blocks[i].sa1);
    add_attn(prefix + ".ca2", blocks[i].ca2);
    add_attn(prefix + ".sa2", blocks[i].sa2);
  }
  for (std::size_t i = 0; i < query_blocks.size(); ++i) {
    add_attn("query" + std::to_string(i), query_blocks[i]);
  }
  add_mlp("head_diag", head_diag);
  add_mlp("head_joint", head_joint);
  return out;
}

std::vector<std::pair<std::string, const Tensor*>> ModelParams::named_leaves() const {
  auto mut = const_cast<ModelParams*>(this)->named_leaves();
  std::vector<std::pair<std::string, const Tensor*>> out;
  out.reserve(mut.size());
  for (auto& [name, t] : mut) out.emplace_back(std::move(name), t);
  return out;
}

std::uint64_t ModelParams::fingerprint() const {
  std::vector<const Tensor*> ts;
  for (const auto& [name, t] : named_leaves()) ts.push_back(t);
  return fingerprint_tensors(ts);
}

ModelParams init_model_params(const ModelConfig& cfg, Rng& rng) {
  cfg.validate();
  ModelParams p;
  p.cfg = cfg;
  p.lemb0 = normal_tensor({cfg.l_i, cfg.d_model}, 1.0, rng);
  p.ctx_embed = init_mlp({cfg.x_dim + cfg.y_dim, cfg.d_model, cfg.d_model}, rng);
  p.query_embed = init_mlp({cfg.x_dim, cfg.d_model, cfg.d_model}, rng);
  const AttnConfig acfg{cfg.d_model, cfg.heads};
  for (std::int64_t i = 0; i < cfg.k; ++i) {
    p.blocks.push_back(init_cmab_weights(cfg.l_b, acfg, cfg.d_ff(), rng));
    p.query_blocks.push_back(init_attn_weights(acfg, cfg.d_ff(), rng));
  }
  // Small final layers keep the initial predictive near N(0, softplus(0)).
  p.head_diag = init_mlp({cfg.d_model, cfg.d_model, 2 * cfg.y_dim}, rng, 0.1);
  p.head_joint = init_mlp({cfg.d_model, cfg.d_model, (2 + cfg.rank) * cfg.y_dim}, rng, 0.1);
  return p;
}

// ---- conditioning / updating ----

namespace {

void check_pairs(const ModelConfig& cfg, const Tensor& xs, const Tensor& ys, const char* what) {
  if (xs.rank() != 2 || xs.extent(1) != cfg.x_dim) {
    throw TensorError(std::string(what) + ": x must be [*, " + std::to_string(cfg.x_dim) +
                      "], got " + shape_str(xs.shape()));
  }
  if (ys.rank() != 2 || ys.extent(1) != cfg.y_dim || ys.extent(0) != xs.extent(0)) {
    throw TensorError(std::string(what) + ": y must be [" + std::to_string(xs.extent(0)) + "," +
                      std::to_string(cfg.y_dim) + "], got " + shape_str(ys.shape()));
  }
  check_finite(xs, what);
  check_finite(ys, what);
}

}  // namespace

Tensor embed_context_pairs(const ModelParams& p, const Tensor& xs, const Tensor& ys) {
  check_pairs(p.cfg, xs, ys, "context pairs");
  return mlp_forward(concat_cols(xs, ys), p.ctx_embed);
}

ConditionedState condition(const ModelParams& p, const Tensor& xs, const Tensor& ys) {
  check_pairs(p.cfg, xs, ys, "condition");
  const std::int64_t n = xs.extent(0);
  if (n < 1) throw TensorError("condition on an empty context");
  const KvChunkSource source = [&p, &xs, &ys](std::int64_t r0, std::int64_t r1) {
    return mlp_forward(concat_cols(slice_rows(xs, r0, r1), slice_rows(ys, r0, r1)), p.ctx_embed);
  };
  CmabStackResult stack = cmab_stack_forward(p.lemb0, source, n, p.blocks, p.cfg.b_c);
  ConditionedState st;
  st.lembs = std::move(stack.lembs);
  st.caches = std::move(stack.caches);
  st.count = n;
  st.params_fp = p.fingerprint();
  return st;
}

ConditionedState update(const ModelParams& p, const ConditionedState& state, const Tensor& xs,
                        const Tensor& ys) {
  check_pairs(p.cfg, xs, ys, "update");
  if (xs.extent(0) < 1) throw TensorError("update with an empty batch of new pairs");
  if (state.params_fp != p.fingerprint()) {
    throw StateError("update: parameters differ from the ones that conditioned this state");
  }
  const Tensor rows = embed_context_pairs(p, xs, ys);
  CmabStackResult stack = cmab_stack_update(p.lemb0, state.caches, rows, p.blocks);
  ConditionedState st;
  st.lembs = std::move(stack.lembs);
  st.caches = std::move(stack.caches);
  st.count = state.count + xs.extent(0);
  st.params_fp = state.params_fp;
  return st;
}

// ---- querying ----

namespace {

Tensor query_trunk(const ModelParams& p, const ConditionedState& state, const Tensor& xs) {
  if (xs.rank() != 2 || xs.extent(1) != p.cfg.x_dim) {
    throw TensorError("query: x must be [*, " + std::to_string(p.cfg.x_dim) + "], got " +
                      shape_str(xs.shape()));
  }
  if (xs.extent(0) < 1) throw TensorError("query with no target points");
  check_finite(xs, "query");
  if (state.params_fp != p.fingerprint()) {
    throw StateError("query: parameters differ from the ones that conditioned this state");
  }
  Tensor qemb = mlp_forward(xs, p.query_embed);
  for (std::size_t k = 0; k < p.query_blocks.size(); ++k) {
    qemb = cross_attention_block(qemb, state.lembs[k + 1], p.query_blocks[k]).out;
  }
  return qemb;
}

// var = floor + (1 - floor) * softplus(raw), strictly above the floor.
Tensor floor_variance(const Tensor& raw, double floor) {
  return add_scalar(scale(softplus(raw), 1.0 - floor), floor);
}

}  // namespace

GaussianPred query_diagonal(const ModelParams& p, const ConditionedState& state,
                            const Tensor& xs) {
  const Tensor h = mlp_forward(query_trunk(p, state, xs), p.head_diag);
  const std::int64_t y = p.cfg.y_dim;
  GaussianPred pred;
  pred.mean = slice_cols(h, 0, y);
  pred.var = floor_variance(slice_cols(h, y, 2 * y), p.cfg.var_floor);
  pred.joint = false;
  return pred;
}

GaussianPred query_joint(const ModelParams& p, const ConditionedState& state, const Tensor& xs) {
  const Tensor h = mlp_forward(query_trunk(p, state, xs), p.head_joint);
  const std::int64_t y = p.cfg.y_dim, r = p.cfg.rank;
  const std::int64_t n = h.extent(0) * y;
  GaussianPred pred;
  pred.mean = slice_cols(h, 0, y);
  pred.diag = floor_variance(slice_cols(h, y, 2 * y), p.cfg.var_floor).reshape({n});
  pred.low_rank = slice_cols(h, 2 * y, (2 + r) * y).reshape({n, r});
  pred.joint = true;
  return pred;
}

Tensor covariance_matrix(const GaussianPred& pred) {
  if (!pred.joint) throw TensorError("covariance_matrix on a diagonal prediction");
  return add(matmul_nt(pred.low_rank, pred.low_rank), diag_embed(pred.diag));
}

double gaussian_nll_diag(const GaussianPred& pred, const Tensor& ys) {
  if (pred.joint) throw TensorError("gaussian_nll_diag on a joint prediction");
  if (!ys.same_shape(pred.mean)) {
    throw TensorError("gaussian_nll_diag: targets " + shape_str(ys.shape()) +
                      " do not match predictions " + shape_str(pred.mean.shape()));
  }
  const std::int64_t m = ys.extent(0);
  auto mu = pred.mean.data();
  auto var = pred.var.data();
  auto yv = ys.data();
  double total = 0.0;
  for (std::size_t i = 0; i < yv.size(); ++i) {
    const double resid = yv[i] - mu[i];
    total += 0.5 * (kLog2Pi + std::log(var[i]) + resid * resid / var[i]);
  }
  if (!std::isfinite(total)) throw TensorError("gaussian_nll_diag produced a non-finite value");
  return total / static_cast<double>(m);
}

double gaussian_nll_joint(const GaussianPred& pred, const Tensor& ys) {
  if (!pred.joint) throw TensorError("gaussian_nll_joint on a diagonal prediction");
  if (!ys.same_shape(pred.mean)) {
    throw TensorError("gaussian_nll_joint: targets " + shape_str(ys.shape()) +
                      " do not match predictions " + shape_str(pred.mean.shape()));
  }
  const std::int64_t m = ys.extent(0);
  const std::int64_t n = pred.diag.extent(0);
  const Tensor l = cholesky(covariance_matrix(pred));
  const Tensor resid = sub(ys.reshape({n}), pred.mean.reshape({n}));
  const Tensor z = tri_solve_lower(l, resid);
  double quad = 0.0;
  for (double v : z.data()) quad += v * v;
  double logdet = 0.0;
  for (std::int64_t i = 0; i < n; ++i) logdet += 2.0 * std::log(l(i, i));
  const double total = 0.5 * (quad + logdet + static_cast<double>(n) * kLog2Pi);
  if (!std::isfinite(total)) throw TensorError("gaussian_nll_joint produced a non-finite value");
  return total / static_cast<double>(m);
}

AndResult predict_and(const ModelParams& p, const ConditionedState& state, const Tensor& xs,
                      Rng& rng, AndMode mode, const Tensor* ys, std::int64_t b_q_override) {
  const std::int64_t m = xs.extent(0);
  if (m < 1) throw TensorError("predict_and with no target points");
  // 0 = model default, -1 = one block covering all targets.
  const std::int64_t b_q = b_q_override > 0 ? b_q_override : (b_q_override == -1 ? m : p.cfg.b_q);
  const std::int64_t y = p.cfg.y_dim;

  AndResult res;
  Tensor mean_all = Tensor::zeros({m, y});
  Tensor feedback_all = Tensor::zeros({m, y});
  double* mean_out = mean_all.mutable_data();
  double* fb_out = feedback_all.mutable_data();

  ConditionedState cur = state;
  double ll_total = 0.0;
  for (std::int64_t r0 = 0; r0 < m; r0 += b_q) {
    const std::int64_t r1 = std::min(r0 + b_q, m);
    const Tensor xb = slice_rows(xs, r0, r1);
    const GaussianPred pred = query_joint(p, cur, xb);
    if (ys != nullptr) {
      const Tensor yb = slice_rows(*ys, r0, r1);
      const double block_nll = gaussian_nll_joint(pred, yb);
      const double block_ll = -block_nll * static_cast<double>(r1 - r0);
      res.block_ll.push_back(block_ll);
      ll_total += block_ll;
    }
    Tensor fb;
    if (mode == AndMode::kSample) {
      const std::int64_t nb = (r1 - r0) * y;
      const Tensor l = cholesky(covariance_matrix(pred));
      const Tensor eps = Tensor::from({nb}, rng.normals(nb));
      fb = add(pred.mean.reshape({nb}), matmul(l, eps.reshape({nb, 1})).reshape({nb}))
               .reshape({r1 - r0, y});
    } else {
      fb = pred.mean;
    }
    auto pm = pred.mean.data();
    auto pf = fb.data();
    for (std::int64_t i = 0; i < (r1 - r0) * y; ++i) {
      mean_out[r0 * y + i] = pm[i];
      fb_out[r0 * y + i] = pf[i];
    }
    res.n_blocks += 1;
    if (r1 < m) cur = update(p, cur, xb, fb);
  }

  res.mean = std::move(mean_all);
  res.feedback = std::move(feedback_all);
  if (ys != nullptr) {
    res.has_ll = true;
    res.ll_per_point = ll_total / static_cast<double>(m);
  }
  return res;
}

// ---- training graph ----

ModelParamsVar lift_params(const ModelParams& p, bool leaves) {
  std::unordered_map<const Tensor*, Var> lifted;
  ModelParamsVar vp;
  vp.cfg = p.cfg;
  for (const auto& [name, t] : p.named_leaves()) {
    Var v = leaves ? make_leaf(*t) : make_constant(*t);
    lifted.emplace(t, v);
    vp.leaves.push_back(v);
  }
  auto at = [&lifted](const Tensor& t) { return lifted.at(&t); };
  auto lift_mlp = [&at](const MlpWeights& m) {
    MlpWeightsVar v;
    for (const Tensor& w : m.w) v.w.push_back(at(w));
    for (const Tensor& b : m.b) v.b.push_back(at(b));
    return v;
  };
  auto lift_attn = [&at](const AttnWeights& w) {
    AttnWeightsVar v;
    v.cfg = w.cfg;
    v.wq = at(w.wq); v.bq = at(w.bq);
    v.wk = at(w.wk); v.bk = at(w.bk);
    v.wv = at(w.wv); v.bv = at(w.bv);
    v.wo = at(w.wo); v.bo = at(w.bo);
    v.ln1_g = at(w.ln1_g); v.ln1_b = at(w.ln1_b);
    v.ln2_g = at(w.ln2_g); v.ln2_b = at(w.ln2_b);
    v.ff_w1 = at(w.ff_w1); v.ff_b1 = at(w.ff_b1);
    v.ff_w2 = at(w.ff_w2); v.ff_b2 = at(w.ff_b2);
    return v;
  };
  vp.lemb0 = at(p.lemb0);
  vp.ctx_embed = lift_mlp(p.ctx_embed);
  vp.query_embed = lift_mlp(p.query_embed);
  for (const CmabWeights& b : p.blocks) {
    CmabWeightsVar bv;
    bv.bemb = at(b.bemb);
    bv.ca1 = lift_attn(b.ca1);
    bv.sa1 = lift_attn(b.sa1);
    bv.ca2 = lift_attn(b.ca2);
    bv.sa2 = lift_attn(b.sa2);
    vp.blocks.push_back(std::move(bv));
  }
  for (const AttnWeights& qb : p.query_blocks) vp.query_blocks.push_back(lift_attn(qb));
  vp.head_diag = lift_mlp(p.head_diag);
  vp.head_joint = lift_mlp(p.head_joint);
  return vp;
}

namespace {

Var query_trunk_train(const ModelParamsVar& p, const Tensor& ctx_x, const Tensor& ctx_y,
                      const Tensor& tgt_x) {
  const Var ctx = mlp_forward(make_constant(concat_cols(ctx_x, ctx_y)), p.ctx_embed);
  const std::vector<Var> lembs = cmab_stack_forward(p.lemb0, ctx, p.blocks);
  Var qemb = mlp_forward(make_constant(tgt_x), p.query_embed);
  for (std::size_t k = 0; k < p.query_blocks.size(); ++k) {
    qemb = cross_attention_block(qemb, lembs[k + 1], p.query_blocks[k]);
  }
  return qemb;
}

Var floor_variance(const Var& raw, double floor) {
  return add_scalar(scale(softplus(raw), 1.0 - floor), floor);
}

}  // namespace

GaussianPredVar query_diagonal_train(const ModelParamsVar& p, const Tensor& ctx_x,
                                     const Tensor& ctx_y, const Tensor& tgt_x) {
  const Var h = mlp_forward(query_trunk_train(p, ctx_x, ctx_y, tgt_x), p.head_diag);
  const std::int64_t y = p.cfg.y_dim;
  GaussianPredVar pred;
  pred.mean = slice_cols(h, 0, y);
  pred.var = floor_variance(slice_cols(h, y, 2 * y), p.cfg.var_floor);
  pred.joint = false;
  return pred;
}

GaussianPredVar query_joint_train(const ModelParamsVar& p, const Tensor& ctx_x,
                                  const Tensor& ctx_y, const Tensor& tgt_x) {
  const Var h = mlp_forward(query_trunk_train(p, ctx_x, ctx_y, tgt_x), p.head_joint);
  const std::int64_t y = p.cfg.y_dim, r = p.cfg.rank;
  const std::int64_t n = h.value().extent(0) * y;
  GaussianPredVar pred;
  pred.mean = slice_cols(h, 0, y);
  pred.diag = reshape(floor_variance(slice_cols(h, y, 2 * y), p.cfg.var_floor), {n});
  pred.low_rank = reshape(slice_cols(h, 2 * y, (2 + r) * y), {n, r});
  pred.joint = true;
  return pred;
}

Var gaussian_nll_diag(const GaussianPredVar& pred, const Tensor& ys) {
  const std::int64_t m = ys.extent(0);
  const Var resid = sub(make_constant(ys), pred.mean);
  const Var terms = add(add_scalar(log_elem(pred.var), kLog2Pi),
                        div(mul(resid, resid), pred.var));
  return scale(sum_all(terms), 0.5 / static_cast<double>(m));
}

Var gaussian_nll_joint(const GaussianPredVar& pred, const Tensor& ys) {
  const std::int64_t m = ys.extent(0);
  const std::int64_t n = pred.diag.value().extent(0);
  const Var sigma = add(matmul(pred.low_rank, transpose(pred.low_rank)), diag_embed(pred.diag));
  const Var l = cholesky(sigma);
  const Var resid = sub(make_constant(ys.reshape({n})), reshape(pred.mean, {n}));
  const Var z = tri_solve_lower(l, resid);
  const Var quad = sum_all(mul(z, z));
  const Var logdet = scale(sum_all(log_elem(take_diag(l))), 2.0);
  const Var total = add_scalar(add(quad, logdet), static_cast<double>(n) * kLog2Pi);
  return scale(total, 0.5 / static_cast<double>(m));
}

Var model_nll_diag(const ModelParamsVar& p, const Tensor& ctx_x, const Tensor& ctx_y,
                   const Tensor& tgt_x, const Tensor& tgt_y) {
  return gaussian_nll_diag(query_diagonal_train(p, ctx_x, ctx_y, tgt_x), tgt_y);
}

Var model_nll_joint(const ModelParamsVar& p, const Tensor& ctx_x, const Tensor& ctx_y,
                    const Tensor& tgt_x, const Tensor& tgt_y) {
  return gaussian_nll_joint(query_joint_train(p, ctx_x, ctx_y, tgt_x), tgt_y);
}

}  // namespace cmanp
