#include "cmanp/trainer.hpp"

#include <chrono>
#include <cmath>
#include <future>
#include <limits>
#include <thread>

#include "cmanp/instrument.hpp"

namespace cmanp {

namespace {

constexpr double kLog2Pi = 1.8378770664093454836;

std::int64_t resolve_threads(std::int64_t requested) {
  if (requested > 0) return requested;
  const unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : static_cast<std::int64_t>(hw);
}

double mean_of(const std::vector<double>& xs) {
  double acc = 0.0;
  for (double x : xs) acc += x;
  return acc / static_cast<double>(xs.size());
}

double stderr_of(const std::vector<double>& xs, double mean) {
  if (xs.size() < 2) return 0.0;
  double acc = 0.0;
  for (double x : xs) acc += (x - mean) * (x - mean);
  const double var = acc / static_cast<double>(xs.size() - 1);
  return std::sqrt(var / static_cast<double>(xs.size()));
}

// Runs fn(i) for i in [0, n) across workers, in deterministic index order
// within each worker.
template <class F>
void parallel_indices(std::int64_t n, std::int64_t threads, F&& fn) {
  const std::int64_t workers = std::min<std::int64_t>(std::max<std::int64_t>(threads, 1), n);
  if (workers <= 1) {
    for (std::int64_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::future<void>> futs;
  const std::int64_t per = (n + workers - 1) / workers;
  for (std::int64_t w = 0; w < workers; ++w) {
    const std::int64_t lo = w * per;
    const std::int64_t hi = std::min(lo + per, n);
    if (lo >= hi) break;
    futs.push_back(std::async(std::launch::async, [lo, hi, &fn] {
      for (std::int64_t i = lo; i < hi; ++i) fn(i);
    }));
  }
  for (auto& f : futs) f.get();
}

}  // namespace

GpTask make_eval_task(const GpTaskConfig& cfg, std::uint64_t seed, std::int64_t index) {
  Rng rng = Rng(seed).fork(0x45564c00ULL + static_cast<std::uint64_t>(index));
  TaskBatch batch = sample_task_batch(cfg, 1, rng);
  return std::move(batch.tasks[0]);
}

EvalResult evaluate(const ModelParams& params, const GpTaskConfig& task_cfg,
                    const EvalConfig& eval_cfg, EvalMode mode) {
  EvalResult res;
  res.tasks = eval_cfg.tasks;
  res.per_task_ll.assign(static_cast<std::size_t>(eval_cfg.tasks),
                         std::numeric_limits<double>::quiet_NaN());
  std::vector<std::int64_t> failures(static_cast<std::size_t>(eval_cfg.tasks), 0);

  parallel_indices(eval_cfg.tasks, resolve_threads(eval_cfg.threads), [&](std::int64_t i) {
    const GpTask task = make_eval_task(task_cfg, eval_cfg.seed, i);
    try {
      const ConditionedState st = condition(params, task.ctx_x, task.ctx_y);
      double ll;
      if (mode == EvalMode::kDiagonal) {
        ll = -gaussian_nll_diag(query_diagonal(params, st, task.tgt_x), task.tgt_y);
      } else {
        Rng sample_rng = Rng(eval_cfg.seed).fork(0x414e4400ULL + static_cast<std::uint64_t>(i));
        const AndResult r = predict_and(params, st, task.tgt_x, sample_rng, eval_cfg.and_mode,
                                        &task.tgt_y, eval_cfg.b_q);
        ll = r.ll_per_point;
      }
      res.per_task_ll[static_cast<std::size_t>(i)] = ll;
    } catch (const TensorError&) {
      failures[static_cast<std::size_t>(i)] = 1;
    }
  });

  std::vector<double> ok;
  ok.reserve(res.per_task_ll.size());
  for (std::size_t i = 0; i < res.per_task_ll.size(); ++i) {
    if (failures[i]) {
      res.chol_failures += 1;
      res.all_finite = false;
    } else if (!std::isfinite(res.per_task_ll[i])) {
      res.all_finite = false;
    } else {
      ok.push_back(res.per_task_ll[i]);
    }
  }
  if (!ok.empty()) {
    res.mean_ll = mean_of(ok);
    res.stderr_ll = stderr_of(ok, res.mean_ll);
  } else {
    res.mean_ll = std::numeric_limits<double>::quiet_NaN();
  }
  return res;
}

EvalResult constant_gaussian_baseline(const GpTaskConfig& task_cfg, const EvalConfig& eval_cfg) {
  EvalResult res;
  res.tasks = eval_cfg.tasks;
  res.per_task_ll.resize(static_cast<std::size_t>(eval_cfg.tasks));
  for (std::int64_t i = 0; i < eval_cfg.tasks; ++i) {
    const GpTask task = make_eval_task(task_cfg, eval_cfg.seed, i);
    auto ys = task.ctx_y.data();
    double mu = 0.0;
    for (double y : ys) mu += y;
    mu /= static_cast<double>(ys.size());
    double var = 0.0;
    for (double y : ys) var += (y - mu) * (y - mu);
    var = std::max(var / static_cast<double>(ys.size()), 1e-8);
    auto ts = task.tgt_y.data();
    double ll = 0.0;
    for (double y : ts) ll += -0.5 * (kLog2Pi + std::log(var) + (y - mu) * (y - mu) / var);
    res.per_task_ll[static_cast<std::size_t>(i)] = ll / static_cast<double>(ts.size());
  }
  res.mean_ll = mean_of(res.per_task_ll);
  res.stderr_ll = stderr_of(res.per_task_ll, res.mean_ll);
  return res;
}

TrainOutcome train(ModelParams& params, const TrainConfig& cfg, const GpTaskConfig& task_cfg) {
  if (cfg.steps < 1 || cfg.batch_tasks < 1) {
    throw TensorError("train config: steps and batch size must be >= 1");
  }
  task_cfg.validate();

  auto leaves = params.named_leaves();
  std::vector<Tensor*> leaf_ptrs;
  leaf_ptrs.reserve(leaves.size());
  for (auto& [name, t] : leaves) leaf_ptrs.push_back(t);
  AdamConfig adam_cfg;
  adam_cfg.lr = cfg.lr;
  adam_cfg.weight_decay = cfg.weight_decay;
  AdamState opt = make_adam_state(leaf_ptrs, adam_cfg);

  // Held-out streams, disjoint from the per-step training forks below.
  const std::uint64_t eval_seed = splitmix64(cfg.seed ^ 0xe5a1e5a1e5a1e5a1ULL);
  EvalConfig eval_cfg;
  eval_cfg.tasks = cfg.eval_tasks;
  eval_cfg.seed = eval_seed;
  eval_cfg.threads = cfg.eval_threads;
  GpTaskConfig matern_cfg = task_cfg;
  matern_cfg.kernel = Kernel::kMatern52;
  const EvalMode eval_mode = cfg.variant == Variant::kDiagonal ? EvalMode::kDiagonal : EvalMode::kAnd;

  TrainOutcome out;
  out.metrics.reserve(static_cast<std::size_t>(cfg.steps));
  const auto t0 = std::chrono::steady_clock::now();
  const Rng base(cfg.seed);

  for (std::int64_t step = 1; step <= cfg.steps; ++step) {
    const std::uint64_t ops_before = instr::madds();
    Rng step_rng = base.fork(static_cast<std::uint64_t>(step));
    const TaskBatch batch = sample_task_batch(task_cfg, cfg.batch_tasks, step_rng);

    // Fresh graph every step; deployment caches are never part of training.
    const ModelParamsVar vp = lift_params(params, /*leaves=*/true);
    Var loss;
    for (const GpTask& task : batch.tasks) {
      const Var task_nll = cfg.variant == Variant::kDiagonal
                               ? model_nll_diag(vp, task.ctx_x, task.ctx_y, task.tgt_x, task.tgt_y)
                               : model_nll_joint(vp, task.ctx_x, task.ctx_y, task.tgt_x, task.tgt_y);
      loss = loss.defined() ? add(loss, task_nll) : task_nll;
    }
    loss = scale(loss, 1.0 / static_cast<double>(cfg.batch_tasks));

    const double loss_value = loss.value().at_flat(0);
    if (!std::isfinite(loss_value)) {
      throw TrainDivergence(step, "training loss became non-finite at step " +
                                      std::to_string(step));
    }
    backward(loss);

    std::vector<Tensor> grads;
    grads.reserve(vp.leaves.size());
    double sq_norm = 0.0;
    for (const Var& leaf : vp.leaves) {
      Tensor g = leaf.grad();
      for (double x : g.data()) sq_norm += x * x;
      grads.push_back(std::move(g));
    }
    const double norm = std::sqrt(sq_norm);
    if (cfg.clip_norm > 0.0 && norm > cfg.clip_norm) {
      const double factor = cfg.clip_norm / norm;
      for (Tensor& g : grads) g = scale(g, factor);
    }
    adam_step(leaf_ptrs, grads, opt);

    MetricRecord rec;
    rec.step = step;
    rec.train_nll = loss_value;
    rec.eval_rbf = std::numeric_limits<double>::quiet_NaN();
    rec.eval_matern = std::numeric_limits<double>::quiet_NaN();
    rec.ops = instr::madds() - ops_before;

    if (cfg.eval_interval > 0 && (step % cfg.eval_interval == 0 || step == cfg.steps)) {
      rec.eval_rbf = evaluate(params, task_cfg, eval_cfg, eval_mode).mean_ll;
      rec.eval_matern = evaluate(params, matern_cfg, eval_cfg, eval_mode).mean_ll;
    }
    rec.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0)
                      .count();
    out.metrics.push_back(rec);
  }

  out.opt = std::move(opt);
  return out;
}

}  // namespace cmanp
