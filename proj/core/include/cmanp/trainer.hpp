#pragma once

#include <vector>

#include "cmanp/adam.hpp"
#include "cmanp/checkpoint.hpp"
#include "cmanp/model.hpp"
#include "cmanp/tasks.hpp"

namespace cmanp {

class TrainDivergence : public std::runtime_error {
 public:
  TrainDivergence(std::int64_t step, const std::string& msg)
      : std::runtime_error(msg), step(step) {}
  std::int64_t step;
};

enum class Variant { kDiagonal, kAnd };

struct TrainConfig {
  std::int64_t steps = 20000;
  std::int64_t batch_tasks = 16;
  double lr = 5e-4;
  double weight_decay = 0.0;
  std::int64_t eval_interval = 1000;
  std::int64_t eval_tasks = 200;
  std::uint64_t seed = 1;
  Variant variant = Variant::kAnd;
  double clip_norm = 1.0;
  std::int64_t eval_threads = 0;  // 0 = hardware concurrency
};

struct MetricRecord {
  std::int64_t step = 0;
  double train_nll = 0.0;
  double eval_rbf = 0.0;    // NaN on non-eval steps
  double eval_matern = 0.0; // NaN on non-eval steps
  double wall_ms = 0.0;
  std::uint64_t ops = 0;    // multiply-adds spent on this step's update
};

enum class EvalMode { kDiagonal, kAnd };

struct EvalConfig {
  std::int64_t tasks = 1000;
  std::uint64_t seed = 9000;
  std::int64_t b_q = 0;  // 0 = model default, -1 = one block over all targets
  std::int64_t threads = 0;
  AndMode and_mode = AndMode::kSample;
};

struct EvalResult {
  double mean_ll = 0.0;
  double stderr_ll = 0.0;
  std::int64_t tasks = 0;
  std::int64_t chol_failures = 0;
  bool all_finite = true;
  std::vector<double> per_task_ll;
};

// Task `index` of the deterministic held-out stream for `seed`. evaluate() and
// the constant baseline read the same stream, so comparisons are paired.
GpTask make_eval_task(const GpTaskConfig& cfg, std::uint64_t seed, std::int64_t index);

// Mean per-point predictive log-likelihood over held-out tasks.
EvalResult evaluate(const ModelParams& params, const GpTaskConfig& task_cfg,
                    const EvalConfig& eval_cfg, EvalMode mode);

// Per task, the best constant Gaussian fit to the context ys (its mean and
// variance), scored on the targets.
EvalResult constant_gaussian_baseline(const GpTaskConfig& task_cfg, const EvalConfig& eval_cfg);

struct TrainOutcome {
  std::vector<MetricRecord> metrics;
  AdamState opt;
};

// Meta-training loop: sample tasks, fresh differentiable forward, NLL, Adam.
// Deterministic given the seed. Throws TrainDivergence on a non-finite loss.
TrainOutcome train(ModelParams& params, const TrainConfig& cfg, const GpTaskConfig& task_cfg);

}  // namespace cmanp
