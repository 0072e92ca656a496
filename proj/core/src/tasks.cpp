#include "cmanp/tasks.hpp"

#include <cmath>

#include "cmanp/tensor_archive.hpp"
#include "cmanp/tensor_ops.hpp"

namespace cmanp {

std::string kernel_name(Kernel k) {
  return k == Kernel::kRbf ? "rbf" : "matern52";
}

Kernel kernel_from_name(const std::string& name) {
  if (name == "rbf") return Kernel::kRbf;
  if (name == "matern52") return Kernel::kMatern52;
  throw TensorError("unknown kernel '" + name + "' (expected rbf or matern52)");
}

void GpTaskConfig::validate() const {
  if (!(lscale_min < lscale_max) || !(sigf_min < sigf_max) || lscale_min <= 0.0 ||
      sigf_min <= 0.0) {
    throw TensorError("task config: hyperparameter ranges must be non-empty and positive");
  }
  if (n_min < 1 || n_min >= n_max || m_min < 1 || total_max <= n_max) {
    throw TensorError("task config: need 1 <= n_min < n_max < total_max");
  }
  if (m_min >= total_max - (n_max - 1)) {
    throw TensorError("task config: target range empty for the largest context");
  }
  if (!(x_min < x_max) || !(jitter > 0.0)) {
    throw TensorError("task config: x range must be non-empty and jitter positive");
  }
}

double kernel_eval(Kernel kind, double lscale, double sigf, double x, double xp) {
  if (!(lscale > 0.0) || !(sigf > 0.0)) {
    throw TensorError("kernel_eval: hyperparameters must be positive");
  }
  const double d = std::abs(x - xp);
  if (kind == Kernel::kRbf) {
    return sigf * sigf * std::exp(-(d * d) / (2.0 * lscale * lscale));
  }
  const double a = std::sqrt(5.0) * d / lscale;
  return sigf * sigf * (1.0 + a + (5.0 * d * d) / (3.0 * lscale * lscale)) * std::exp(-a);
}

Tensor kernel_matrix(Kernel kind, double lscale, double sigf, std::span<const double> xs,
                     double jitter) {
  const std::int64_t n = static_cast<std::int64_t>(xs.size());
  Tensor k = Tensor::zeros({n, n});
  double* p = k.mutable_data();
  for (std::int64_t i = 0; i < n; ++i) {
    for (std::int64_t j = 0; j <= i; ++j) {
      const double v = kernel_eval(kind, lscale, sigf, xs[i], xs[j]);
      p[i * n + j] = v;
      p[j * n + i] = v;
    }
    p[i * n + i] += jitter;
  }
  return k;
}

std::vector<double> sample_gp_function(Rng& rng, Kernel kind, double lscale, double sigf,
                                       std::span<const double> xs, double jitter) {
  const std::int64_t n = static_cast<std::int64_t>(xs.size());
  Tensor l;
  try {
    l = cholesky(kernel_matrix(kind, lscale, sigf, xs, jitter));
  } catch (const TensorError&) {
    // One escalation retry; beyond that the hyperparameters are pathological.
    l = cholesky(kernel_matrix(kind, lscale, sigf, xs, jitter * 10.0));
  }
  const std::vector<double> z = rng.normals(n);
  std::vector<double> y(static_cast<std::size_t>(n), 0.0);
  auto dl = l.data();
  for (std::int64_t i = 0; i < n; ++i) {
    double acc = 0.0;
    for (std::int64_t j = 0; j <= i; ++j) acc += dl[i * n + j] * z[static_cast<std::size_t>(j)];
    y[static_cast<std::size_t>(i)] = acc;
  }
  return y;
}

TaskBatch sample_task_batch(const GpTaskConfig& cfg, std::int64_t batch, Rng& rng) {
  cfg.validate();
  if (batch < 1) throw TensorError("sample_task_batch: batch must be >= 1");
  TaskBatch out;
  out.tasks.reserve(static_cast<std::size_t>(batch));
  for (std::int64_t b = 0; b < batch; ++b) {
    GpTask task;
    task.lscale = rng.uniform(cfg.lscale_min, cfg.lscale_max);
    task.sigf = rng.uniform(cfg.sigf_min, cfg.sigf_max);
    const std::int64_t n = rng.uniform_int(cfg.n_min, cfg.n_max);
    const std::int64_t m = rng.uniform_int(cfg.m_min, cfg.total_max - n);
    std::vector<double> xs(static_cast<std::size_t>(n + m));
    for (double& x : xs) x = rng.uniform(cfg.x_min, cfg.x_max);
    const std::vector<double> ys =
        sample_gp_function(rng, cfg.kernel, task.lscale, task.sigf, xs, cfg.jitter);
    task.ctx_x = Tensor::from({n, 1}, {xs.begin(), xs.begin() + n});
    task.ctx_y = Tensor::from({n, 1}, {ys.begin(), ys.begin() + n});
    task.tgt_x = Tensor::from({m, 1}, {xs.begin() + n, xs.end()});
    task.tgt_y = Tensor::from({m, 1}, {ys.begin() + n, ys.end()});
    out.tasks.push_back(std::move(task));
  }
  return out;
}

void dump_task_batch(const std::string& path, const TaskBatch& batch) {
  TensorArchive a;
  a.meta.emplace_back("kind", "task_batch");
  a.meta.emplace_back("tasks", std::to_string(batch.tasks.size()));
  for (std::size_t i = 0; i < batch.tasks.size(); ++i) {
    const GpTask& t = batch.tasks[i];
    const std::string p = "task" + std::to_string(i);
    a.tensors.emplace_back(p + ".ctx_x", t.ctx_x);
    a.tensors.emplace_back(p + ".ctx_y", t.ctx_y);
    a.tensors.emplace_back(p + ".tgt_x", t.tgt_x);
    a.tensors.emplace_back(p + ".tgt_y", t.tgt_y);
    a.tensors.emplace_back(p + ".hyper", Tensor::from({2}, {t.lscale, t.sigf}));
  }
  save_archive(path, a);
}

TaskBatch load_task_batch(const std::string& path) {
  const TensorArchive a = load_archive(path);
  if (!a.has_meta("kind") || a.meta_value("kind") != "task_batch") {
    throw ArchiveError("'" + path + "' is not a task batch archive");
  }
  const std::int64_t n = std::stoll(a.meta_value("tasks"));
  TaskBatch batch;
  for (std::int64_t i = 0; i < n; ++i) {
    const std::string p = "task" + std::to_string(i);
    GpTask t;
    t.ctx_x = a.tensor(p + ".ctx_x");
    t.ctx_y = a.tensor(p + ".ctx_y");
    t.tgt_x = a.tensor(p + ".tgt_x");
    t.tgt_y = a.tensor(p + ".tgt_y");
    const Tensor& hyper = a.tensor(p + ".hyper");
    t.lscale = hyper(0);
    t.sigf = hyper(1);
    batch.tasks.push_back(std::move(t));
  }
  return batch;
}

}  // namespace cmanp
