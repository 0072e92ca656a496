#pragma once

#include "cmanp/autodiff.hpp"
#include "cmanp/tensor_ops.hpp"

// Differentiable mirrors of the dense kernels. Forward values are computed by
// the exact same kernels as the non-recorded path, so a recorded forward pass
// is bitwise identical to an unrecorded one.

namespace cmanp {

Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var div(const Var& a, const Var& b);
Var scale(const Var& a, double c);
Var add_scalar(const Var& a, double c);
Var add_rowvec(const Var& a, const Var& v);

Var matmul(const Var& a, const Var& b);
Var bmm(const Var& a, const Var& b);
Var bmm_nt(const Var& a, const Var& b);
Var transpose(const Var& a);

Var relu(const Var& a);
Var softplus(const Var& a);
Var exp_elem(const Var& a);
Var log_elem(const Var& a);

Var layer_norm(const Var& x, const Var& gain, const Var& bias);
Var softmax_last(const Var& x);

Var split_heads(const Var& x, std::int64_t heads);
Var merge_heads(const Var& x);
Var slice_cols(const Var& x, std::int64_t c0, std::int64_t c1);
Var reshape(const Var& x, Shape shape);
Var sum_all(const Var& x);

Var cholesky(const Var& s);
Var tri_solve_lower(const Var& l, const Var& b);
Var take_diag(const Var& a);
Var diag_embed(const Var& v);

struct MlpWeightsVar {
  std::vector<Var> w;
  std::vector<Var> b;
};
Var mlp_forward(const Var& x, const MlpWeightsVar& weights);

}  // namespace cmanp
