#include "cli_config.hpp"

#include <fstream>

namespace cmanp::cli {

using nlohmann::json;

json default_config_json() {
  return json{
      {"model",
       {{"k", 2},
        {"l_i", 32},
        {"l_b", 32},
        {"d_model", 64},
        {"heads", 4},
        {"b_c", 64},
        {"b_q", 5},
        {"rank", 4},
        {"x_dim", 1},
        {"y_dim", 1},
        {"var_floor", 0.01},
        {"ff_mult", 2}}},
      {"train",
       {{"steps", 20000},
        {"batch_tasks", 16},
        {"lr", 5e-4},
        {"weight_decay", 0.0},
        {"eval_interval", 1000},
        {"eval_tasks", 200},
        {"seed", 1},
        {"variant", "and"},
        {"clip_norm", 1.0},
        {"eval_threads", 0},
        {"wd_grid", false}}},
      {"tasks",
       {{"kernel", "rbf"},
        {"lscale_min", 0.6},
        {"lscale_max", 1.0},
        {"sigf_min", 0.1},
        {"sigf_max", 1.0},
        {"n_min", 3},
        {"n_max", 47},
        {"m_min", 3},
        {"total_max", 50},
        {"x_min", -2.0},
        {"x_max", 2.0},
        {"jitter", 1e-6}}},
      {"eval",
       {{"tasks", 1000},
        {"seed", 9000},
        {"mode", "and"},
        {"b_q", 0},
        {"threads", 0},
        {"feedback", "sample"}}},
      {"bench",
       {{"memory_sweep", json::array({256, 1024, 4096})},
        {"update_u", json::array({64, 128, 256})},
        {"update_prior_n", json::array({100, 10000})},
        {"update_rows", 16},
        {"seed", 123}}}};
}

namespace {

std::string type_name(const json& v) {
  if (v.is_boolean()) return "bool";
  if (v.is_number()) return "number";
  if (v.is_string()) return "string";
  if (v.is_array()) return "array";
  if (v.is_object()) return "object";
  return "null";
}

bool same_category(const json& a, const json& b) {
  if (a.is_number() && b.is_number()) return true;
  return a.type() == b.type() ||
         (a.is_boolean() && b.is_boolean());
}

void merge_checked(json& base, const json& user, const std::string& prefix) {
  if (!user.is_object()) {
    throw ConfigError("config section '" + (prefix.empty() ? "<root>" : prefix) +
                      "' must be an object");
  }
  for (const auto& [key, value] : user.items()) {
    const std::string path = prefix.empty() ? key : prefix + "." + key;
    if (!base.contains(key)) throw ConfigError("unknown config key '" + path + "'");
    json& slot = base[key];
    if (slot.is_object()) {
      merge_checked(slot, value, path);
    } else {
      if (!same_category(slot, value)) {
        throw ConfigError("config key '" + path + "' expects a " + type_name(slot) + ", got " +
                          type_name(value));
      }
      slot = value;
    }
  }
}

void apply_override(json& base, const std::string& spec) {
  const auto eq = spec.find('=');
  if (eq == std::string::npos || eq == 0) {
    throw ConfigError("override '" + spec + "' is not of the form key=value");
  }
  const std::string path = spec.substr(0, eq);
  const std::string raw = spec.substr(eq + 1);

  json* node = &base;
  std::size_t start = 0;
  std::vector<std::string> parts;
  while (true) {
    const auto dot = path.find('.', start);
    parts.push_back(path.substr(start, dot == std::string::npos ? dot : dot - start));
    if (dot == std::string::npos) break;
    start = dot + 1;
  }
  for (std::size_t i = 0; i + 1 < parts.size(); ++i) {
    if (!node->contains(parts[i]) || !(*node)[parts[i]].is_object()) {
      throw ConfigError("unknown config key '" + path + "'");
    }
    node = &(*node)[parts[i]];
  }
  const std::string& leaf = parts.back();
  if (!node->contains(leaf)) throw ConfigError("unknown config key '" + path + "'");
  json& slot = (*node)[leaf];
  if (slot.is_object()) throw ConfigError("cannot assign to config section '" + path + "'");

  try {
    if (slot.is_boolean()) {
      if (raw == "true") slot = true;
      else if (raw == "false") slot = false;
      else throw ConfigError("");
    } else if (slot.is_number_integer() || slot.is_number_unsigned()) {
      slot = static_cast<std::int64_t>(std::stoll(raw));
    } else if (slot.is_number_float()) {
      slot = std::stod(raw);
    } else if (slot.is_string()) {
      slot = raw;
    } else if (slot.is_array()) {
      const json parsed = json::parse(raw);
      if (!parsed.is_array()) throw ConfigError("");
      slot = parsed;
    }
  } catch (const std::exception&) {
    throw ConfigError("override '" + spec + "' has the wrong type for key '" + path +
                      "' (expected " + type_name(slot) + ")");
  }
}

std::vector<std::int64_t> int_list(const json& arr, const std::string& what) {
  std::vector<std::int64_t> out;
  for (const auto& v : arr) {
    if (!v.is_number_integer() && !v.is_number_unsigned()) {
      throw ConfigError(what + " must contain integers");
    }
    out.push_back(v.get<std::int64_t>());
  }
  if (out.empty()) throw ConfigError(what + " must not be empty");
  return out;
}

}  // namespace

CliConfig load_cli_config(const std::optional<std::string>& path,
                          const std::vector<std::string>& overrides,
                          const std::optional<std::uint64_t>& seed_override) {
  json merged = default_config_json();
  if (path.has_value()) {
    std::ifstream in(*path);
    if (!in) throw ConfigError("cannot open config file '" + *path + "'");
    json user;
    try {
      user = json::parse(in);
    } catch (const json::parse_error& e) {
      throw ConfigError("config file '" + *path + "' is not valid JSON: " + e.what());
    }
    merge_checked(merged, user, "");
  }
  for (const std::string& spec : overrides) apply_override(merged, spec);
  if (seed_override.has_value()) {
    merged["train"]["seed"] = *seed_override;
    merged["eval"]["seed"] = splitmix64(*seed_override ^ 0xe5a1000000000001ULL);
    merged["bench"]["seed"] = splitmix64(*seed_override ^ 0xbe4c000000000002ULL);
  }

  CliConfig cfg;
  const json& m = merged["model"];
  cfg.model.k = m["k"].get<std::int64_t>();
  cfg.model.l_i = m["l_i"].get<std::int64_t>();
  cfg.model.l_b = m["l_b"].get<std::int64_t>();
  cfg.model.d_model = m["d_model"].get<std::int64_t>();
  cfg.model.heads = m["heads"].get<std::int64_t>();
  cfg.model.b_c = m["b_c"].get<std::int64_t>();
  cfg.model.b_q = m["b_q"].get<std::int64_t>();
  cfg.model.rank = m["rank"].get<std::int64_t>();
  cfg.model.x_dim = m["x_dim"].get<std::int64_t>();
  cfg.model.y_dim = m["y_dim"].get<std::int64_t>();
  cfg.model.var_floor = m["var_floor"].get<double>();
  cfg.model.ff_mult = m["ff_mult"].get<std::int64_t>();
  cfg.model.validate();

  const json& t = merged["train"];
  cfg.train.steps = t["steps"].get<std::int64_t>();
  cfg.train.batch_tasks = t["batch_tasks"].get<std::int64_t>();
  cfg.train.lr = t["lr"].get<double>();
  cfg.train.weight_decay = t["weight_decay"].get<double>();
  cfg.train.eval_interval = t["eval_interval"].get<std::int64_t>();
  cfg.train.eval_tasks = t["eval_tasks"].get<std::int64_t>();
  cfg.train.seed = t["seed"].get<std::uint64_t>();
  cfg.train.clip_norm = t["clip_norm"].get<double>();
  cfg.train.eval_threads = t["eval_threads"].get<std::int64_t>();
  const std::string variant = t["variant"].get<std::string>();
  if (variant == "diagonal") cfg.train.variant = Variant::kDiagonal;
  else if (variant == "and") cfg.train.variant = Variant::kAnd;
  else throw ConfigError("train.variant must be 'diagonal' or 'and', got '" + variant + "'");
  cfg.wd_grid = t["wd_grid"].get<bool>();

  const json& k = merged["tasks"];
  cfg.tasks.kernel = kernel_from_name(k["kernel"].get<std::string>());
  cfg.tasks.lscale_min = k["lscale_min"].get<double>();
  cfg.tasks.lscale_max = k["lscale_max"].get<double>();
  cfg.tasks.sigf_min = k["sigf_min"].get<double>();
  cfg.tasks.sigf_max = k["sigf_max"].get<double>();
  cfg.tasks.n_min = k["n_min"].get<std::int64_t>();
  cfg.tasks.n_max = k["n_max"].get<std::int64_t>();
  cfg.tasks.m_min = k["m_min"].get<std::int64_t>();
  cfg.tasks.total_max = k["total_max"].get<std::int64_t>();
  cfg.tasks.x_min = k["x_min"].get<double>();
  cfg.tasks.x_max = k["x_max"].get<double>();
  cfg.tasks.jitter = k["jitter"].get<double>();
  cfg.tasks.validate();

  const json& e = merged["eval"];
  cfg.eval.tasks = e["tasks"].get<std::int64_t>();
  cfg.eval.seed = e["seed"].get<std::uint64_t>();
  cfg.eval.b_q = e["b_q"].get<std::int64_t>();
  cfg.eval.threads = e["threads"].get<std::int64_t>();
  const std::string mode = e["mode"].get<std::string>();
  if (mode == "diagonal") cfg.eval_mode = EvalMode::kDiagonal;
  else if (mode == "and") cfg.eval_mode = EvalMode::kAnd;
  else throw ConfigError("eval.mode must be 'diagonal' or 'and', got '" + mode + "'");
  const std::string feedback = e["feedback"].get<std::string>();
  if (feedback == "sample") cfg.eval.and_mode = AndMode::kSample;
  else if (feedback == "mean") cfg.eval.and_mode = AndMode::kMean;
  else throw ConfigError("eval.feedback must be 'sample' or 'mean', got '" + feedback + "'");

  const json& b = merged["bench"];
  cfg.bench.memory_sweep = int_list(b["memory_sweep"], "bench.memory_sweep");
  cfg.bench.update_u = int_list(b["update_u"], "bench.update_u");
  cfg.bench.update_prior_n = int_list(b["update_prior_n"], "bench.update_prior_n");
  cfg.bench.update_rows = b["update_rows"].get<std::int64_t>();
  cfg.bench.seed = b["seed"].get<std::uint64_t>();
  return cfg;
}

}  // namespace cmanp::cli
