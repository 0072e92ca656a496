#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "cmanp/model.hpp"
#include "cmanp/tasks.hpp"
#include "cmanp/trainer.hpp"

namespace cmanp::cli {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct BenchConfig {
  std::vector<std::int64_t> memory_sweep{256, 1024, 4096};
  std::vector<std::int64_t> update_u{64, 128, 256};
  std::vector<std::int64_t> update_prior_n{100, 10000};
  std::int64_t update_rows = 16;  // u used for the prior-N comparison
  std::uint64_t seed = 123;
};

struct CliConfig {
  ModelConfig model;
  TrainConfig train;
  GpTaskConfig tasks;
  EvalConfig eval;
  EvalMode eval_mode = EvalMode::kAnd;
  BenchConfig bench;
  bool wd_grid = false;
};

nlohmann::json default_config_json();

// Layered configuration: built-in defaults, then the optional file, then
// key=value overrides. Unknown keys and type mismatches are rejected.
CliConfig load_cli_config(const std::optional<std::string>& path,
                          const std::vector<std::string>& overrides,
                          const std::optional<std::uint64_t>& seed_override);

}  // namespace cmanp::cli
