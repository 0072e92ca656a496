#pragma once

#include <optional>
#include <string>

#include "cmanp/adam.hpp"
#include "cmanp/model.hpp"

namespace cmanp {

struct Checkpoint {
  ModelParams params;
  std::optional<AdamState> opt;
  std::int64_t step = 0;
};

// Exact round-trip: loaded parameters are bitwise identical to saved ones.
void save_checkpoint(const std::string& path, const ModelParams& params,
                     const AdamState* opt = nullptr, std::int64_t step = 0);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace cmanp
