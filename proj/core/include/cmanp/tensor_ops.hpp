#pragma once

#include <span>
#include <vector>

#include "cmanp/rng.hpp"
#include "cmanp/tensor.hpp"

// Dense kernels over Tensor. Every function is a pure value transform; results
// are checked for finiteness. Multiply-add counts are reported to the
// instrumentation layer by the kernels that dominate cost.

namespace cmanp {

// ---- linear algebra ----
Tensor matmul(const Tensor& a, const Tensor& b);     // [m,k]x[k,n]
Tensor matmul_tn(const Tensor& a, const Tensor& b);  // a^T b: [k,m]x[k,n] -> [m,n]
Tensor matmul_nt(const Tensor& a, const Tensor& b);  // a b^T: [m,k]x[n,k] -> [m,n]
Tensor transpose(const Tensor& a);                   // 2-d

// Batched forms over a leading batch axis.
Tensor bmm(const Tensor& a, const Tensor& b);     // [h,m,k]x[h,k,n]
Tensor bmm_nt(const Tensor& a, const Tensor& b);  // [h,m,k]x[h,n,k] -> [h,m,n]
Tensor bmm_tn(const Tensor& a, const Tensor& b);  // [h,k,m]x[h,k,n] -> [h,m,n]

// ---- elementwise ----
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double c);
Tensor add_scalar(const Tensor& a, double c);
Tensor relu(const Tensor& a);
Tensor softplus(const Tensor& a);  // log(1 + exp(x)), stable for large |x|
Tensor sigmoid(const Tensor& a);
Tensor exp_elem(const Tensor& a);
Tensor log_elem(const Tensor& a);

// Broadcast a length-n vector over the trailing axis of a [..., n] tensor.
Tensor add_rowvec(const Tensor& a, const Tensor& v);
// Sum a [..., n] tensor over all leading axes -> [n].
Tensor colsum(const Tensor& a);

// ---- reductions / shapes ----
double sum(const Tensor& a);
Tensor sum_all(const Tensor& a);  // rank-0 result
Tensor slice_rows(const Tensor& a, std::int64_t r0, std::int64_t r1);
Tensor slice_cols(const Tensor& a, std::int64_t c0, std::int64_t c1);
Tensor concat_cols(const Tensor& a, const Tensor& b);
Tensor split_heads(const Tensor& x, std::int64_t heads);  // [L,d] -> [h,L,d/h]
Tensor merge_heads(const Tensor& x);                      // [h,L,dh] -> [L,h*dh]

// ---- softmax family ----
double logsumexp(std::span<const double> xs);  // errors on empty input
Tensor softmax_rows(const Tensor& x);          // [m,n], rows sum to 1
Tensor softmax_last(const Tensor& x);          // softmax over trailing axis
Tensor logsumexp_last(const Tensor& x);        // drops trailing axis

// ---- neural blocks ----
// Normalizes the trailing axis with sigma = sqrt(var + 1e-5); a constant row
// therefore maps to `bias` rather than NaN.
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias);
inline constexpr double kLayerNormEps = 1e-5;

struct MlpWeights {
  std::vector<Tensor> w;  // layer i: [in_i, out_i]
  std::vector<Tensor> b;  // layer i: [out_i]
};
// Affine layers with ReLU between them and no activation after the last.
Tensor mlp_forward(const Tensor& x, const MlpWeights& weights);

// ---- parameter initialization ----
Tensor xavier_uniform(std::int64_t fan_in, std::int64_t fan_out, Rng& rng);
Tensor normal_tensor(Shape shape, double stddev, Rng& rng);
// dims = {in, hidden..., out}; the final layer is scaled by final_scale.
MlpWeights init_mlp(const std::vector<std::int64_t>& dims, Rng& rng, double final_scale = 1.0);

// ---- small dense factorizations ----
Tensor cholesky(const Tensor& s);  // lower factor; throws TensorError if not SPD
// Solve L z = b (lower triangular); b is [n] or [n,m].
Tensor tri_solve_lower(const Tensor& l, const Tensor& b);
// Solve L^T z = b.
Tensor tri_solve_lower_t(const Tensor& l, const Tensor& b);
Tensor take_diag(const Tensor& a);   // [n,n] -> [n]
Tensor diag_embed(const Tensor& v);  // [n] -> [n,n]
Tensor tril(const Tensor& a);        // zero strict upper triangle

}  // namespace cmanp
