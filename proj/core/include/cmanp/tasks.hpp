#pragma once

#include <span>
#include <string>
#include <vector>

#include "cmanp/rng.hpp"
#include "cmanp/tensor.hpp"

namespace cmanp {

enum class Kernel { kRbf, kMatern52 };

std::string kernel_name(Kernel k);
Kernel kernel_from_name(const std::string& name);

// 1-d regression task generator: functions drawn from a GP prior with
// uniformly sampled kernel hyperparameters and context/target split sizes.
struct GpTaskConfig {
  Kernel kernel = Kernel::kRbf;
  double lscale_min = 0.6, lscale_max = 1.0;  // l ~ U[0.6, 1.0)
  double sigf_min = 0.1, sigf_max = 1.0;      // sigma_f ~ U[0.1, 1.0)
  std::int64_t n_min = 3, n_max = 47;         // N ~ U[3, 47)
  std::int64_t m_min = 3, total_max = 50;     // M ~ U[3, total_max - N)
  double x_min = -2.0, x_max = 2.0;
  double jitter = 1e-6;

  void validate() const;
};

struct GpTask {
  Tensor ctx_x, ctx_y;  // [N,1]
  Tensor tgt_x, tgt_y;  // [M,1]
  double lscale = 0.0, sigf = 0.0;
};

struct TaskBatch {
  std::vector<GpTask> tasks;
};

double kernel_eval(Kernel kind, double lscale, double sigf, double x, double xp);

// Gram matrix with `jitter` added to the diagonal.
Tensor kernel_matrix(Kernel kind, double lscale, double sigf, std::span<const double> xs,
                     double jitter);

// Draws one function: y = L z with L the Cholesky factor of the jittered Gram
// matrix. Retries once with 10x jitter before giving up.
std::vector<double> sample_gp_function(Rng& rng, Kernel kind, double lscale, double sigf,
                                       std::span<const double> xs, double jitter);

TaskBatch sample_task_batch(const GpTaskConfig& cfg, std::int64_t batch, Rng& rng);

// Test-fixture dump in the same binary tensor container as checkpoints.
void dump_task_batch(const std::string& path, const TaskBatch& batch);
TaskBatch load_task_batch(const std::string& path);

}  // namespace cmanp
