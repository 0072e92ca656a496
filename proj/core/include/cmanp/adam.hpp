#pragma once

#include <cstdint>
#include <vector>

#include "cmanp/tensor.hpp"

namespace cmanp {

struct AdamConfig {
  double lr = 5e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;  // decoupled, applied directly to the parameter
};

struct AdamState {
  std::int64_t step = 0;
  std::vector<Tensor> m;  // first moments, congruent with the parameters
  std::vector<Tensor> v;  // second moments
  AdamConfig cfg;
};

AdamState make_adam_state(const std::vector<Tensor*>& params, AdamConfig cfg);

// Bias-corrected Adam update; parameters are replaced by updated tensors.
void adam_step(std::vector<Tensor*>& params, const std::vector<Tensor>& grads, AdamState& state);

}  // namespace cmanp
