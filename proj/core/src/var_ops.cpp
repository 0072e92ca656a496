#include "cmanp/var_ops.hpp"

#include <cmath>

namespace cmanp {

namespace {

// Elementwise product without the finiteness check, for backward closures
// that may legitimately see zero gradients times large values.
Tensor hadamard(const Tensor& a, const Tensor& b) { return mul(a, b); }

Tensor relu_mask(const Tensor& x) {
  Tensor out = Tensor::zeros(x.shape());
  double* o = out.mutable_data();
  auto dx = x.data();
  for (std::size_t i = 0; i < dx.size(); ++i) o[i] = dx[i] > 0.0 ? 1.0 : 0.0;
  return out;
}

// Lower triangle with halved diagonal; the projection used by the Cholesky
// pullback.
Tensor phi(const Tensor& x) {
  const std::int64_t n = x.extent(0);
  Tensor out = Tensor::zeros({n, n});
  double* o = out.mutable_data();
  auto dx = x.data();
  for (std::int64_t i = 0; i < n; ++i) {
    for (std::int64_t j = 0; j < i; ++j) o[i * n + j] = dx[i * n + j];
    o[i * n + i] = 0.5 * dx[i * n + i];
  }
  return out;
}

}  // namespace

Var add(const Var& a, const Var& b) {
  return make_var(add(a.value(), b.value()), {a, b}, [a, b](const Tensor& g) {
    accumulate_grad(a, g);
    accumulate_grad(b, g);
  });
}

Var sub(const Var& a, const Var& b) {
  return make_var(sub(a.value(), b.value()), {a, b}, [a, b](const Tensor& g) {
    accumulate_grad(a, g);
    accumulate_grad(b, scale(g, -1.0));
  });
}

Var mul(const Var& a, const Var& b) {
  return make_var(mul(a.value(), b.value()), {a, b}, [a, b](const Tensor& g) {
    accumulate_grad(a, hadamard(g, b.value()));
    accumulate_grad(b, hadamard(g, a.value()));
  });
}

Var div(const Var& a, const Var& b) {
  Tensor out = div(a.value(), b.value());
  return make_var(out, {a, b}, [a, b, out](const Tensor& g) {
    accumulate_grad(a, div(g, b.value()));
    accumulate_grad(b, scale(div(hadamard(g, out), b.value()), -1.0));
  });
}

Var scale(const Var& a, double c) {
  return make_var(scale(a.value(), c), {a}, [a, c](const Tensor& g) {
    accumulate_grad(a, scale(g, c));
  });
}

Var add_scalar(const Var& a, double c) {
  return make_var(add_scalar(a.value(), c), {a}, [a](const Tensor& g) {
    accumulate_grad(a, g);
  });
}

Var add_rowvec(const Var& a, const Var& v) {
  return make_var(add_rowvec(a.value(), v.value()), {a, v}, [a, v](const Tensor& g) {
    accumulate_grad(a, g);
    accumulate_grad(v, colsum(g));
  });
}

Var matmul(const Var& a, const Var& b) {
  return make_var(matmul(a.value(), b.value()), {a, b}, [a, b](const Tensor& g) {
    accumulate_grad(a, matmul_nt(g, b.value()));
    accumulate_grad(b, matmul_tn(a.value(), g));
  });
}

Var bmm(const Var& a, const Var& b) {
  return make_var(bmm(a.value(), b.value()), {a, b}, [a, b](const Tensor& g) {
    accumulate_grad(a, bmm_nt(g, b.value()));
    accumulate_grad(b, bmm_tn(a.value(), g));
  });
}

Var bmm_nt(const Var& a, const Var& b) {
  return make_var(bmm_nt(a.value(), b.value()), {a, b}, [a, b](const Tensor& g) {
    accumulate_grad(a, bmm(g, b.value()));
    accumulate_grad(b, bmm_tn(g, a.value()));
  });
}

Var transpose(const Var& a) {
  return make_var(transpose(a.value()), {a}, [a](const Tensor& g) {
    accumulate_grad(a, transpose(g));
  });
}

Var relu(const Var& a) {
  return make_var(relu(a.value()), {a}, [a](const Tensor& g) {
    accumulate_grad(a, hadamard(g, relu_mask(a.value())));
  });
}

Var softplus(const Var& a) {
  return make_var(softplus(a.value()), {a}, [a](const Tensor& g) {
    accumulate_grad(a, hadamard(g, sigmoid(a.value())));
  });
}

Var exp_elem(const Var& a) {
  Tensor out = exp_elem(a.value());
  return make_var(out, {a}, [a, out](const Tensor& g) {
    accumulate_grad(a, hadamard(g, out));
  });
}

Var log_elem(const Var& a) {
  return make_var(log_elem(a.value()), {a}, [a](const Tensor& g) {
    accumulate_grad(a, div(g, a.value()));
  });
}

Var layer_norm(const Var& x, const Var& gain, const Var& bias) {
  return make_var(layer_norm(x.value(), gain.value(), bias.value()), {x, gain, bias},
                  [x, gain, bias](const Tensor& g) {
    const Tensor& xv = x.value();
    const std::int64_t n = xv.extent(xv.rank() - 1);
    const std::int64_t rows = xv.numel() / n;
    Tensor dx = Tensor::zeros(xv.shape());
    Tensor dgain = Tensor::zeros({n});
    Tensor dbias = Tensor::zeros({n});
    double* pdx = dx.mutable_data();
    double* pdg = dgain.mutable_data();
    double* pdb = dbias.mutable_data();
    auto px = xv.data();
    auto pg = g.data();
    auto pgain = gain.value().data();
    for (std::int64_t r = 0; r < rows; ++r) {
      const double* xr = px.data() + r * n;
      const double* gr = pg.data() + r * n;
      double mean = 0.0;
      for (std::int64_t j = 0; j < n; ++j) mean += xr[j];
      mean /= static_cast<double>(n);
      double var = 0.0;
      for (std::int64_t j = 0; j < n; ++j) var += (xr[j] - mean) * (xr[j] - mean);
      var /= static_cast<double>(n);
      const double inv_sigma = 1.0 / std::sqrt(var + kLayerNormEps);
      double sum_gg = 0.0, sum_ggx = 0.0;
      for (std::int64_t j = 0; j < n; ++j) {
        const double xhat = (xr[j] - mean) * inv_sigma;
        const double gg = gr[j] * pgain[j];
        sum_gg += gg;
        sum_ggx += gg * xhat;
        pdg[j] += gr[j] * xhat;
        pdb[j] += gr[j];
      }
      const double m_gg = sum_gg / static_cast<double>(n);
      const double m_ggx = sum_ggx / static_cast<double>(n);
      for (std::int64_t j = 0; j < n; ++j) {
        const double xhat = (xr[j] - mean) * inv_sigma;
        pdx[r * n + j] = inv_sigma * (gr[j] * pgain[j] - m_gg - xhat * m_ggx);
      }
    }
    accumulate_grad(x, dx);
    accumulate_grad(gain, dgain);
    accumulate_grad(bias, dbias);
  });
}

Var softmax_last(const Var& x) {
  Tensor out = softmax_last(x.value());
  return make_var(out, {x}, [x, out](const Tensor& g) {
    const std::int64_t n = out.extent(out.rank() - 1);
    const std::int64_t rows = out.numel() / n;
    Tensor dx = Tensor::zeros(out.shape());
    double* pdx = dx.mutable_data();
    auto pp = out.data();
    auto pg = g.data();
    for (std::int64_t r = 0; r < rows; ++r) {
      double dot = 0.0;
      for (std::int64_t j = 0; j < n; ++j) dot += pg[r * n + j] * pp[r * n + j];
      for (std::int64_t j = 0; j < n; ++j)
        pdx[r * n + j] = pp[r * n + j] * (pg[r * n + j] - dot);
    }
    accumulate_grad(x, dx);
  });
}

Var split_heads(const Var& x, std::int64_t heads) {
  return make_var(split_heads(x.value(), heads), {x}, [x](const Tensor& g) {
    accumulate_grad(x, merge_heads(g));
  });
}

Var merge_heads(const Var& x) {
  const std::int64_t heads = x.value().extent(0);
  return make_var(merge_heads(x.value()), {x}, [x, heads](const Tensor& g) {
    accumulate_grad(x, split_heads(g, heads));
  });
}

Var slice_cols(const Var& x, std::int64_t c0, std::int64_t c1) {
  return make_var(slice_cols(x.value(), c0, c1), {x}, [x, c0, c1](const Tensor& g) {
    const Tensor& xv = x.value();
    const std::int64_t m = xv.extent(0), n = xv.extent(1);
    Tensor dx = Tensor::zeros({m, n});
    double* p = dx.mutable_data();
    auto pg = g.data();
    for (std::int64_t i = 0; i < m; ++i)
      for (std::int64_t j = c0; j < c1; ++j) p[i * n + j] = pg[i * (c1 - c0) + (j - c0)];
    accumulate_grad(x, dx);
  });
}

Var reshape(const Var& x, Shape shape) {
  Shape original = x.value().shape();
  return make_var(x.value().reshape(std::move(shape)), {x}, [x, original](const Tensor& g) {
    accumulate_grad(x, g.reshape(original));
  });
}

Var sum_all(const Var& x) {
  return make_var(sum_all(x.value()), {x}, [x](const Tensor& g) {
    accumulate_grad(x, Tensor::full(x.value().shape(), g.at_flat(0)));
  });
}

Var cholesky(const Var& s) {
  Tensor l = cholesky(s.value());
  return make_var(l, {s}, [s, l](const Tensor& g) {
    // Pullback through A = L L^T for symmetric A: phi-projected inner term
    // sandwiched by two triangular solves, then symmetrized.
    Tensor p = phi(matmul_tn(l, g));
    Tensor y = tri_solve_lower_t(l, p);
    Tensor q = transpose(tri_solve_lower_t(l, transpose(y)));
    accumulate_grad(s, scale(add(q, transpose(q)), 0.5));
  });
}

Var tri_solve_lower(const Var& l, const Var& b) {
  Tensor z = tri_solve_lower(l.value(), b.value());
  return make_var(z, {l, b}, [l, b, z](const Tensor& g) {
    Tensor gb = tri_solve_lower_t(l.value(), g);
    accumulate_grad(b, gb);
    const bool vec = z.rank() == 1;
    Tensor gb2 = vec ? gb.reshape({gb.extent(0), 1}) : gb;
    Tensor z2 = vec ? z.reshape({z.extent(0), 1}) : z;
    accumulate_grad(l, scale(tril(matmul_nt(gb2, z2)), -1.0));
  });
}

Var take_diag(const Var& a) {
  return make_var(take_diag(a.value()), {a}, [a](const Tensor& g) {
    accumulate_grad(a, diag_embed(g));
  });
}

Var diag_embed(const Var& v) {
  return make_var(diag_embed(v.value()), {v}, [v](const Tensor& g) {
    accumulate_grad(v, take_diag(g));
  });
}

Var mlp_forward(const Var& x, const MlpWeightsVar& weights) {
  if (weights.w.empty() || weights.w.size() != weights.b.size()) {
    throw TensorError("mlp_forward: malformed weights");
  }
  Var h = x;
  for (std::size_t i = 0; i < weights.w.size(); ++i) {
    h = add_rowvec(matmul(h, weights.w[i]), weights.b[i]);
    if (i + 1 < weights.w.size()) h = relu(h);
  }
  return h;
}

}  // namespace cmanp
