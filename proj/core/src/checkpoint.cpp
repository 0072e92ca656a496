#include "cmanp/checkpoint.hpp"

#include <charconv>

#include "cmanp/tensor_archive.hpp"

namespace cmanp {

namespace {

std::string fmt_double(double v) {
  char buf[40];
  auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, end);
}

double parse_double(const std::string& s) {
  double v = 0.0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc()) throw ArchiveError("checkpoint: bad numeric field '" + s + "'");
  return v;
}

std::int64_t parse_int(const std::string& s) {
  std::int64_t v = 0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc()) throw ArchiveError("checkpoint: bad integer field '" + s + "'");
  return v;
}

void put_config(TensorArchive& a, const ModelConfig& cfg) {
  a.meta.emplace_back("cfg.k", std::to_string(cfg.k));
  a.meta.emplace_back("cfg.l_i", std::to_string(cfg.l_i));
  a.meta.emplace_back("cfg.l_b", std::to_string(cfg.l_b));
  a.meta.emplace_back("cfg.d_model", std::to_string(cfg.d_model));
  a.meta.emplace_back("cfg.heads", std::to_string(cfg.heads));
  a.meta.emplace_back("cfg.b_c", std::to_string(cfg.b_c));
  a.meta.emplace_back("cfg.b_q", std::to_string(cfg.b_q));
  a.meta.emplace_back("cfg.rank", std::to_string(cfg.rank));
  a.meta.emplace_back("cfg.x_dim", std::to_string(cfg.x_dim));
  a.meta.emplace_back("cfg.y_dim", std::to_string(cfg.y_dim));
  a.meta.emplace_back("cfg.var_floor", fmt_double(cfg.var_floor));
  a.meta.emplace_back("cfg.ff_mult", std::to_string(cfg.ff_mult));
}

ModelConfig get_config(const TensorArchive& a) {
  ModelConfig cfg;
  cfg.k = parse_int(a.meta_value("cfg.k"));
  cfg.l_i = parse_int(a.meta_value("cfg.l_i"));
  cfg.l_b = parse_int(a.meta_value("cfg.l_b"));
  cfg.d_model = parse_int(a.meta_value("cfg.d_model"));
  cfg.heads = parse_int(a.meta_value("cfg.heads"));
  cfg.b_c = parse_int(a.meta_value("cfg.b_c"));
  cfg.b_q = parse_int(a.meta_value("cfg.b_q"));
  cfg.rank = parse_int(a.meta_value("cfg.rank"));
  cfg.x_dim = parse_int(a.meta_value("cfg.x_dim"));
  cfg.y_dim = parse_int(a.meta_value("cfg.y_dim"));
  cfg.var_floor = parse_double(a.meta_value("cfg.var_floor"));
  cfg.ff_mult = parse_int(a.meta_value("cfg.ff_mult"));
  return cfg;
}

}  // namespace

void save_checkpoint(const std::string& path, const ModelParams& params, const AdamState* opt,
                     std::int64_t step) {
  TensorArchive a;
  a.meta.emplace_back("kind", "checkpoint");
  a.meta.emplace_back("step", std::to_string(step));
  put_config(a, params.cfg);
  const auto leaves = params.named_leaves();
  for (const auto& [name, t] : leaves) a.tensors.emplace_back(name, *t);
  if (opt != nullptr) {
    a.meta.emplace_back("opt.step", std::to_string(opt->step));
    a.meta.emplace_back("opt.lr", fmt_double(opt->cfg.lr));
    a.meta.emplace_back("opt.beta1", fmt_double(opt->cfg.beta1));
    a.meta.emplace_back("opt.beta2", fmt_double(opt->cfg.beta2));
    a.meta.emplace_back("opt.eps", fmt_double(opt->cfg.eps));
    a.meta.emplace_back("opt.weight_decay", fmt_double(opt->cfg.weight_decay));
    if (opt->m.size() != leaves.size()) {
      throw ArchiveError("checkpoint: optimizer state does not match parameter count");
    }
    for (std::size_t i = 0; i < leaves.size(); ++i) {
      a.tensors.emplace_back("opt.m." + leaves[i].first, opt->m[i]);
      a.tensors.emplace_back("opt.v." + leaves[i].first, opt->v[i]);
    }
  }
  save_archive(path, a);
}

Checkpoint load_checkpoint(const std::string& path) {
  const TensorArchive a = load_archive(path);
  if (!a.has_meta("kind") || a.meta_value("kind") != "checkpoint") {
    throw ArchiveError("'" + path + "' is not a checkpoint archive");
  }
  Checkpoint ck;
  ck.step = parse_int(a.meta_value("step"));
  const ModelConfig cfg = get_config(a);
  // Materialize a parameter set of the right structure, then overwrite every
  // leaf from the archive.
  Rng scratch_rng(0);
  ck.params = init_model_params(cfg, scratch_rng);
  for (auto& [name, t] : ck.params.named_leaves()) {
    const Tensor& loaded = a.tensor(name);
    if (!loaded.same_shape(*t)) {
      throw ArchiveError("checkpoint tensor '" + name + "' has shape " +
                         shape_str(loaded.shape()) + ", expected " + shape_str(t->shape()));
    }
    *t = loaded;
  }
  if (a.has_meta("opt.step")) {
    AdamState opt;
    opt.step = parse_int(a.meta_value("opt.step"));
    opt.cfg.lr = parse_double(a.meta_value("opt.lr"));
    opt.cfg.beta1 = parse_double(a.meta_value("opt.beta1"));
    opt.cfg.beta2 = parse_double(a.meta_value("opt.beta2"));
    opt.cfg.eps = parse_double(a.meta_value("opt.eps"));
    opt.cfg.weight_decay = parse_double(a.meta_value("opt.weight_decay"));
    for (const auto& [name, t] : ck.params.named_leaves()) {
      opt.m.push_back(a.tensor("opt.m." + name));
      opt.v.push_back(a.tensor("opt.v." + name));
    }
    ck.opt = std::move(opt);
  }
  return ck;
}

}  // namespace cmanp
