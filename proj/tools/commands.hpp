#pragma once

#include <optional>
#include <string>
#include <vector>

namespace cmanp::cli {

struct CommonArgs {
  std::optional<std::string> config_path;
  std::vector<std::string> overrides;  // key=value, applied after the file
  std::string out_dir = "cmanp_out";
  std::optional<std::uint64_t> seed;
  std::optional<std::string> checkpoint;
};

int cmd_train(const CommonArgs& args);
int cmd_eval(const CommonArgs& args);
int cmd_bench_memory(const CommonArgs& args);
int cmd_bench_update(const CommonArgs& args);
int cmd_verify(const CommonArgs& args, const std::string& inject_fault);

}  // namespace cmanp::cli
