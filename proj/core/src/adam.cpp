#include "cmanp/adam.hpp"

#include <cmath>

#include "cmanp/instrument.hpp"

namespace cmanp {

AdamState make_adam_state(const std::vector<Tensor*>& params, AdamConfig cfg) {
  AdamState s;
  s.cfg = cfg;
  s.m.reserve(params.size());
  s.v.reserve(params.size());
  for (const Tensor* p : params) {
    s.m.push_back(Tensor::zeros(p->shape()));
    s.v.push_back(Tensor::zeros(p->shape()));
  }
  return s;
}

void adam_step(std::vector<Tensor*>& params, const std::vector<Tensor>& grads, AdamState& state) {
  if (params.size() != grads.size() || params.size() != state.m.size()) {
    throw TensorError("adam_step: parameter/gradient/state count mismatch");
  }
  state.step += 1;
  const double b1 = state.cfg.beta1, b2 = state.cfg.beta2;
  const double bc1 = 1.0 - std::pow(b1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(b2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor& p = *params[i];
    const Tensor& g = grads[i];
    if (!p.same_shape(g) || !p.same_shape(state.m[i])) {
      throw TensorError("adam_step: shape mismatch at parameter " + std::to_string(i));
    }
    Tensor np = Tensor::zeros(p.shape());
    Tensor nm = Tensor::zeros(p.shape());
    Tensor nv = Tensor::zeros(p.shape());
    double* pp = np.mutable_data();
    double* pm = nm.mutable_data();
    double* pv = nv.mutable_data();
    auto dp = p.data();
    auto dg = g.data();
    auto dm = state.m[i].data();
    auto dv = state.v[i].data();
    for (std::size_t j = 0; j < dp.size(); ++j) {
      const double m = b1 * dm[j] + (1.0 - b1) * dg[j];
      const double v = b2 * dv[j] + (1.0 - b2) * dg[j] * dg[j];
      const double mhat = m / bc1;
      const double vhat = v / bc2;
      pm[j] = m;
      pv[j] = v;
      pp[j] = dp[j] - state.cfg.lr * (mhat / (std::sqrt(vhat) + state.cfg.eps) +
                                      state.cfg.weight_decay * dp[j]);
    }
    instr::add_madds(dp.size() * 6);
    check_finite(np, "adam_step");
    p = np;
    state.m[i] = nm;
    state.v[i] = nv;
  }
}

}  // namespace cmanp
