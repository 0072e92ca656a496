#include "cmanp/tensor_ops.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>

#include "cmanp/instrument.hpp"

namespace cmanp {

namespace {

void require(bool ok, const std::string& msg) {
  if (!ok) throw TensorError(msg);
}

void require_rank(const Tensor& t, std::int64_t rank, const char* op) {
  require(t.rank() == rank, std::string(op) + ": expected rank " + std::to_string(rank) +
                                ", got " + shape_str(t.shape()));
}

// Rows of the trailing axis: numel / extent(last).
std::int64_t lead_rows(const Tensor& t) {
  require(t.rank() >= 1, "trailing-axis op on rank-0 tensor");
  const std::int64_t n = t.extent(t.rank() - 1);
  return n == 0 ? 0 : t.numel() / n;
}

Shape drop_last(const Shape& s) { return Shape(s.begin(), s.end() - 1); }

}  // namespace

// ---- linear algebra ----

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank(a, 2, "matmul");
  require_rank(b, 2, "matmul");
  const std::int64_t m = a.extent(0), k = a.extent(1), n = b.extent(1);
  require(b.extent(0) == k, "matmul: inner extents disagree, " + shape_str(a.shape()) + " x " +
                                shape_str(b.shape()));
  Tensor out = Tensor::zeros({m, n});
  double* o = out.mutable_data();
  const double* pa = a.data().data();
  const double* pb = b.data().data();
  for (std::int64_t i = 0; i < m; ++i) {
    double* orow = o + i * n;
    for (std::int64_t l = 0; l < k; ++l) {
      const double av = pa[i * k + l];
      const double* brow = pb + l * n;
      for (std::int64_t j = 0; j < n; ++j) orow[j] += av * brow[j];
    }
  }
  instr::add_madds(static_cast<std::uint64_t>(m) * k * n);
  check_finite(out, "matmul");
  return out;
}

Tensor matmul_tn(const Tensor& a, const Tensor& b) {
  require_rank(a, 2, "matmul_tn");
  require_rank(b, 2, "matmul_tn");
  const std::int64_t k = a.extent(0), m = a.extent(1), n = b.extent(1);
  require(b.extent(0) == k, "matmul_tn: leading extents disagree");
  Tensor out = Tensor::zeros({m, n});
  double* o = out.mutable_data();
  const double* pa = a.data().data();
  const double* pb = b.data().data();
  for (std::int64_t l = 0; l < k; ++l) {
    const double* arow = pa + l * m;
    const double* brow = pb + l * n;
    for (std::int64_t i = 0; i < m; ++i) {
      const double av = arow[i];
      double* orow = o + i * n;
      for (std::int64_t j = 0; j < n; ++j) orow[j] += av * brow[j];
    }
  }
  instr::add_madds(static_cast<std::uint64_t>(m) * k * n);
  check_finite(out, "matmul_tn");
  return out;
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  require_rank(a, 2, "matmul_nt");
  require_rank(b, 2, "matmul_nt");
  const std::int64_t m = a.extent(0), k = a.extent(1), n = b.extent(0);
  require(b.extent(1) == k, "matmul_nt: trailing extents disagree");
  Tensor out = Tensor::zeros({m, n});
  double* o = out.mutable_data();
  const double* pa = a.data().data();
  const double* pb = b.data().data();
  for (std::int64_t i = 0; i < m; ++i) {
    const double* arow = pa + i * k;
    for (std::int64_t j = 0; j < n; ++j) {
      const double* brow = pb + j * k;
      double acc = 0.0;
      for (std::int64_t l = 0; l < k; ++l) acc += arow[l] * brow[l];
      o[i * n + j] = acc;
    }
  }
  instr::add_madds(static_cast<std::uint64_t>(m) * k * n);
  check_finite(out, "matmul_nt");
  return out;
}

Tensor transpose(const Tensor& a) {
  require_rank(a, 2, "transpose");
  const std::int64_t m = a.extent(0), n = a.extent(1);
  Tensor out = Tensor::zeros({n, m});
  double* o = out.mutable_data();
  const double* p = a.data().data();
  for (std::int64_t i = 0; i < m; ++i)
    for (std::int64_t j = 0; j < n; ++j) o[j * m + i] = p[i * n + j];
  return out;
}

namespace {

enum class BmmKind { kNN, kNT, kTN };

Tensor bmm_impl(const Tensor& a, const Tensor& b, BmmKind kind, const char* op) {
  require_rank(a, 3, op);
  require_rank(b, 3, op);
  const std::int64_t h = a.extent(0);
  require(b.extent(0) == h, std::string(op) + ": batch extents disagree");
  std::int64_t m, k, n;
  switch (kind) {
    case BmmKind::kNN:
      m = a.extent(1), k = a.extent(2), n = b.extent(2);
      require(b.extent(1) == k, std::string(op) + ": inner extents disagree");
      break;
    case BmmKind::kNT:
      m = a.extent(1), k = a.extent(2), n = b.extent(1);
      require(b.extent(2) == k, std::string(op) + ": inner extents disagree");
      break;
    case BmmKind::kTN:
      m = a.extent(2), k = a.extent(1), n = b.extent(2);
      require(b.extent(1) == k, std::string(op) + ": inner extents disagree");
      break;
  }
  Tensor out = Tensor::zeros({h, m, n});
  double* o = out.mutable_data();
  const double* pa = a.data().data();
  const double* pb = b.data().data();
  for (std::int64_t bi = 0; bi < h; ++bi) {
    const double* A = pa + bi * a.extent(1) * a.extent(2);
    const double* B = pb + bi * b.extent(1) * b.extent(2);
    double* O = o + bi * m * n;
    for (std::int64_t i = 0; i < m; ++i) {
      for (std::int64_t j = 0; j < n; ++j) {
        double acc = 0.0;
        for (std::int64_t l = 0; l < k; ++l) {
          double av, bv;
          switch (kind) {
            case BmmKind::kNN: av = A[i * k + l]; bv = B[l * n + j]; break;
            case BmmKind::kNT: av = A[i * k + l]; bv = B[j * k + l]; break;
            case BmmKind::kTN: av = A[l * m + i]; bv = B[l * n + j]; break;
          }
          acc += av * bv;
        }
        O[i * n + j] = acc;
      }
    }
  }
  instr::add_madds(static_cast<std::uint64_t>(h) * m * k * n);
  check_finite(out, op);
  return out;
}

}  // namespace

Tensor bmm(const Tensor& a, const Tensor& b) { return bmm_impl(a, b, BmmKind::kNN, "bmm"); }
Tensor bmm_nt(const Tensor& a, const Tensor& b) { return bmm_impl(a, b, BmmKind::kNT, "bmm_nt"); }
Tensor bmm_tn(const Tensor& a, const Tensor& b) { return bmm_impl(a, b, BmmKind::kTN, "bmm_tn"); }

// ---- elementwise ----

namespace {

template <class F>
Tensor zip(const Tensor& a, const Tensor& b, const char* op, F f) {
  require(a.same_shape(b), std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                               shape_str(b.shape()));
  Tensor out = Tensor::zeros(a.shape());
  double* o = out.mutable_data();
  auto da = a.data();
  auto db = b.data();
  for (std::size_t i = 0; i < da.size(); ++i) o[i] = f(da[i], db[i]);
  instr::add_madds(da.size());
  check_finite(out, op);
  return out;
}

template <class F>
Tensor map(const Tensor& a, const char* op, F f) {
  Tensor out = Tensor::zeros(a.shape());
  double* o = out.mutable_data();
  auto da = a.data();
  for (std::size_t i = 0; i < da.size(); ++i) o[i] = f(da[i]);
  instr::add_madds(da.size());
  check_finite(out, op);
  return out;
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) { return zip(a, b, "add", [](double x, double y) { return x + y; }); }
Tensor sub(const Tensor& a, const Tensor& b) { return zip(a, b, "sub", [](double x, double y) { return x - y; }); }
Tensor mul(const Tensor& a, const Tensor& b) { return zip(a, b, "mul", [](double x, double y) { return x * y; }); }
Tensor div(const Tensor& a, const Tensor& b) { return zip(a, b, "div", [](double x, double y) { return x / y; }); }

Tensor scale(const Tensor& a, double c) { return map(a, "scale", [c](double x) { return x * c; }); }
Tensor add_scalar(const Tensor& a, double c) { return map(a, "add_scalar", [c](double x) { return x + c; }); }
Tensor relu(const Tensor& a) { return map(a, "relu", [](double x) { return x > 0.0 ? x : 0.0; }); }

Tensor softplus(const Tensor& a) {
  return map(a, "softplus", [](double x) {
    if (x > 0.0) return x + std::log1p(std::exp(-x));
    return std::log1p(std::exp(x));
  });
}

Tensor sigmoid(const Tensor& a) {
  return map(a, "sigmoid", [](double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
  });
}

Tensor exp_elem(const Tensor& a) { return map(a, "exp", [](double x) { return std::exp(x); }); }
Tensor log_elem(const Tensor& a) { return map(a, "log", [](double x) { return std::log(x); }); }

Tensor add_rowvec(const Tensor& a, const Tensor& v) {
  require_rank(v, 1, "add_rowvec");
  const std::int64_t n = v.extent(0);
  require(a.rank() >= 1 && a.extent(a.rank() - 1) == n, "add_rowvec: trailing extent mismatch");
  Tensor out = Tensor::zeros(a.shape());
  double* o = out.mutable_data();
  auto da = a.data();
  auto dv = v.data();
  const std::int64_t rows = lead_rows(a);
  for (std::int64_t r = 0; r < rows; ++r)
    for (std::int64_t j = 0; j < n; ++j) o[r * n + j] = da[r * n + j] + dv[j];
  instr::add_madds(static_cast<std::uint64_t>(rows) * n);
  check_finite(out, "add_rowvec");
  return out;
}

Tensor colsum(const Tensor& a) {
  require(a.rank() >= 1, "colsum: rank-0 input");
  const std::int64_t n = a.extent(a.rank() - 1);
  Tensor out = Tensor::zeros({n});
  double* o = out.mutable_data();
  auto da = a.data();
  const std::int64_t rows = lead_rows(a);
  for (std::int64_t r = 0; r < rows; ++r)
    for (std::int64_t j = 0; j < n; ++j) o[j] += da[r * n + j];
  instr::add_madds(static_cast<std::uint64_t>(rows) * n);
  check_finite(out, "colsum");
  return out;
}

// ---- reductions / shapes ----

double sum(const Tensor& a) {
  double acc = 0.0;
  for (double x : a.data()) acc += x;
  instr::add_madds(a.data().size());
  return acc;
}

Tensor sum_all(const Tensor& a) {
  Tensor out = Tensor::scalar(sum(a));
  check_finite(out, "sum_all");
  return out;
}

Tensor slice_rows(const Tensor& a, std::int64_t r0, std::int64_t r1) {
  require_rank(a, 2, "slice_rows");
  const std::int64_t m = a.extent(0), n = a.extent(1);
  require(0 <= r0 && r0 <= r1 && r1 <= m, "slice_rows: bad range");
  Tensor out = Tensor::zeros({r1 - r0, n});
  std::memcpy(out.mutable_data(), a.data().data() + r0 * n,
              static_cast<std::size_t>((r1 - r0) * n) * sizeof(double));
  return out;
}

Tensor slice_cols(const Tensor& a, std::int64_t c0, std::int64_t c1) {
  require_rank(a, 2, "slice_cols");
  const std::int64_t m = a.extent(0), n = a.extent(1);
  require(0 <= c0 && c0 <= c1 && c1 <= n, "slice_cols: bad range");
  Tensor out = Tensor::zeros({m, c1 - c0});
  double* o = out.mutable_data();
  auto da = a.data();
  for (std::int64_t i = 0; i < m; ++i)
    for (std::int64_t j = c0; j < c1; ++j) o[i * (c1 - c0) + (j - c0)] = da[i * n + j];
  return out;
}

Tensor concat_cols(const Tensor& a, const Tensor& b) {
  require_rank(a, 2, "concat_cols");
  require_rank(b, 2, "concat_cols");
  const std::int64_t m = a.extent(0);
  require(b.extent(0) == m, "concat_cols: row counts disagree");
  const std::int64_t na = a.extent(1), nb = b.extent(1);
  Tensor out = Tensor::zeros({m, na + nb});
  double* o = out.mutable_data();
  auto da = a.data();
  auto db = b.data();
  for (std::int64_t i = 0; i < m; ++i) {
    std::memcpy(o + i * (na + nb), da.data() + i * na, na * sizeof(double));
    std::memcpy(o + i * (na + nb) + na, db.data() + i * nb, nb * sizeof(double));
  }
  return out;
}

Tensor split_heads(const Tensor& x, std::int64_t heads) {
  require_rank(x, 2, "split_heads");
  const std::int64_t l = x.extent(0), d = x.extent(1);
  require(heads >= 1 && d % heads == 0, "split_heads: head count must divide width");
  const std::int64_t dh = d / heads;
  Tensor out = Tensor::zeros({heads, l, dh});
  double* o = out.mutable_data();
  auto dx = x.data();
  for (std::int64_t h = 0; h < heads; ++h)
    for (std::int64_t i = 0; i < l; ++i)
      for (std::int64_t c = 0; c < dh; ++c)
        o[(h * l + i) * dh + c] = dx[i * d + h * dh + c];
  return out;
}

Tensor merge_heads(const Tensor& x) {
  require_rank(x, 3, "merge_heads");
  const std::int64_t heads = x.extent(0), l = x.extent(1), dh = x.extent(2);
  Tensor out = Tensor::zeros({l, heads * dh});
  double* o = out.mutable_data();
  auto dx = x.data();
  for (std::int64_t h = 0; h < heads; ++h)
    for (std::int64_t i = 0; i < l; ++i)
      for (std::int64_t c = 0; c < dh; ++c)
        o[i * heads * dh + h * dh + c] = dx[(h * l + i) * dh + c];
  return out;
}

// ---- softmax family ----

double logsumexp(std::span<const double> xs) {
  if (xs.empty()) throw TensorError("logsumexp of empty input");
  double m = -std::numeric_limits<double>::infinity();
  for (double x : xs) m = std::max(m, x);
  double acc = 0.0;
  for (double x : xs) acc += std::exp(x - m);
  instr::add_madds(2 * xs.size());
  return m + std::log(acc);
}

namespace {

// Writes exp(x - logsumexp(x)) row by row over the trailing axis.
void softmax_trailing(const Tensor& x, double* out) {
  const std::int64_t n = x.extent(x.rank() - 1);
  require(n >= 1, "softmax: empty trailing axis");
  auto dx = x.data();
  const std::int64_t rows = lead_rows(x);
  for (std::int64_t r = 0; r < rows; ++r) {
    const double lse = logsumexp(dx.subspan(static_cast<std::size_t>(r * n), static_cast<std::size_t>(n)));
    for (std::int64_t j = 0; j < n; ++j) out[r * n + j] = std::exp(dx[r * n + j] - lse);
  }
  instr::add_madds(static_cast<std::uint64_t>(rows) * n);
}

}  // namespace

Tensor softmax_rows(const Tensor& x) {
  require_rank(x, 2, "softmax_rows");
  Tensor out = Tensor::zeros(x.shape());
  softmax_trailing(x, out.mutable_data());
  check_finite(out, "softmax_rows");
  return out;
}

Tensor softmax_last(const Tensor& x) {
  Tensor out = Tensor::zeros(x.shape());
  softmax_trailing(x, out.mutable_data());
  check_finite(out, "softmax_last");
  return out;
}

Tensor logsumexp_last(const Tensor& x) {
  const std::int64_t n = x.extent(x.rank() - 1);
  Tensor out = Tensor::zeros(drop_last(x.shape()));
  double* o = out.mutable_data();
  auto dx = x.data();
  const std::int64_t rows = lead_rows(x);
  for (std::int64_t r = 0; r < rows; ++r)
    o[r] = logsumexp(dx.subspan(static_cast<std::size_t>(r * n), static_cast<std::size_t>(n)));
  check_finite(out, "logsumexp_last");
  return out;
}

// ---- neural blocks ----

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias) {
  require(x.rank() >= 1, "layer_norm: rank-0 input");
  const std::int64_t n = x.extent(x.rank() - 1);
  require_rank(gain, 1, "layer_norm");
  require_rank(bias, 1, "layer_norm");
  require(gain.extent(0) == n && bias.extent(0) == n, "layer_norm: gain/bias width mismatch");
  Tensor out = Tensor::zeros(x.shape());
  double* o = out.mutable_data();
  auto dx = x.data();
  auto dg = gain.data();
  auto db = bias.data();
  const std::int64_t rows = lead_rows(x);
  for (std::int64_t r = 0; r < rows; ++r) {
    const double* row = dx.data() + r * n;
    double mean = 0.0;
    for (std::int64_t j = 0; j < n; ++j) mean += row[j];
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (std::int64_t j = 0; j < n; ++j) {
      const double d = row[j] - mean;
      var += d * d;
    }
    var /= static_cast<double>(n);
    const double inv_sigma = 1.0 / std::sqrt(var + kLayerNormEps);
    for (std::int64_t j = 0; j < n; ++j)
      o[r * n + j] = (row[j] - mean) * inv_sigma * dg[j] + db[j];
  }
  instr::add_madds(static_cast<std::uint64_t>(rows) * n * 4);
  check_finite(out, "layer_norm");
  return out;
}

Tensor mlp_forward(const Tensor& x, const MlpWeights& weights) {
  require(weights.w.size() == weights.b.size() && !weights.w.empty(),
          "mlp_forward: malformed weights");
  Tensor h = x;
  for (std::size_t i = 0; i < weights.w.size(); ++i) {
    h = add_rowvec(matmul(h, weights.w[i]), weights.b[i]);
    if (i + 1 < weights.w.size()) h = relu(h);
  }
  return h;
}

// ---- parameter initialization ----

Tensor xavier_uniform(std::int64_t fan_in, std::int64_t fan_out, Rng& rng) {
  const double a = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  Tensor t = Tensor::zeros({fan_in, fan_out});
  double* p = t.mutable_data();
  for (std::int64_t i = 0; i < t.numel(); ++i) p[i] = rng.uniform(-a, a);
  return t;
}

Tensor normal_tensor(Shape shape, double stddev, Rng& rng) {
  Tensor t = Tensor::zeros(std::move(shape));
  double* p = t.mutable_data();
  for (std::int64_t i = 0; i < t.numel(); ++i) p[i] = stddev * rng.normal();
  return t;
}

MlpWeights init_mlp(const std::vector<std::int64_t>& dims, Rng& rng, double final_scale) {
  require(dims.size() >= 2, "init_mlp: need at least input and output widths");
  MlpWeights m;
  for (std::size_t i = 0; i + 1 < dims.size(); ++i) {
    Tensor w = xavier_uniform(dims[i], dims[i + 1], rng);
    if (i + 2 == dims.size() && final_scale != 1.0) w = scale(w, final_scale);
    m.w.push_back(std::move(w));
    m.b.push_back(Tensor::zeros({dims[i + 1]}));
  }
  return m;
}

// ---- small dense factorizations ----

Tensor cholesky(const Tensor& s) {
  require_rank(s, 2, "cholesky");
  const std::int64_t n = s.extent(0);
  require(s.extent(1) == n, "cholesky: input not square");
  Tensor out = Tensor::zeros({n, n});
  double* l = out.mutable_data();
  auto ds = s.data();
  for (std::int64_t i = 0; i < n; ++i) {
    for (std::int64_t j = 0; j <= i; ++j) {
      double acc = ds[i * n + j];
      for (std::int64_t k = 0; k < j; ++k) acc -= l[i * n + k] * l[j * n + k];
      if (i == j) {
        if (!(acc > 0.0)) {
          throw TensorError("cholesky: matrix not positive definite (pivot " +
                            std::to_string(acc) + " at " + std::to_string(i) + ")");
        }
        l[i * n + j] = std::sqrt(acc);
      } else {
        l[i * n + j] = acc / l[j * n + j];
      }
    }
  }
  instr::add_madds(static_cast<std::uint64_t>(n) * n * n / 6 + n * n);
  check_finite(out, "cholesky");
  return out;
}

namespace {

Tensor tri_solve_impl(const Tensor& l, const Tensor& b, bool transposed, const char* op) {
  require_rank(l, 2, op);
  const std::int64_t n = l.extent(0);
  require(l.extent(1) == n, std::string(op) + ": factor not square");
  const bool vec = b.rank() == 1;
  require(vec || b.rank() == 2, std::string(op) + ": rhs must be rank 1 or 2");
  require(b.extent(0) == n, std::string(op) + ": rhs height mismatch");
  const std::int64_t m = vec ? 1 : b.extent(1);
  Tensor out = Tensor::zeros(b.shape());
  double* z = out.mutable_data();
  auto dl = l.data();
  auto db = b.data();
  for (std::int64_t c = 0; c < m; ++c) {
    if (!transposed) {
      for (std::int64_t i = 0; i < n; ++i) {
        double acc = db[i * m + c];
        for (std::int64_t k = 0; k < i; ++k) acc -= dl[i * n + k] * z[k * m + c];
        z[i * m + c] = acc / dl[i * n + i];
      }
    } else {
      for (std::int64_t i = n - 1; i >= 0; --i) {
        double acc = db[i * m + c];
        for (std::int64_t k = i + 1; k < n; ++k) acc -= dl[k * n + i] * z[k * m + c];
        z[i * m + c] = acc / dl[i * n + i];
      }
    }
  }
  instr::add_madds(static_cast<std::uint64_t>(n) * n * m / 2);
  check_finite(out, op);
  return out;
}

}  // namespace

Tensor tri_solve_lower(const Tensor& l, const Tensor& b) {
  return tri_solve_impl(l, b, false, "tri_solve_lower");
}

Tensor tri_solve_lower_t(const Tensor& l, const Tensor& b) {
  return tri_solve_impl(l, b, true, "tri_solve_lower_t");
}

Tensor take_diag(const Tensor& a) {
  require_rank(a, 2, "take_diag");
  const std::int64_t n = a.extent(0);
  require(a.extent(1) == n, "take_diag: input not square");
  Tensor out = Tensor::zeros({n});
  double* o = out.mutable_data();
  auto da = a.data();
  for (std::int64_t i = 0; i < n; ++i) o[i] = da[i * n + i];
  return out;
}

Tensor diag_embed(const Tensor& v) {
  require_rank(v, 1, "diag_embed");
  const std::int64_t n = v.extent(0);
  Tensor out = Tensor::zeros({n, n});
  double* o = out.mutable_data();
  auto dv = v.data();
  for (std::int64_t i = 0; i < n; ++i) o[i * n + i] = dv[i];
  check_finite(out, "diag_embed");
  return out;
}

Tensor tril(const Tensor& a) {
  require_rank(a, 2, "tril");
  const std::int64_t m = a.extent(0), n = a.extent(1);
  Tensor out = Tensor::zeros({m, n});
  double* o = out.mutable_data();
  auto da = a.data();
  for (std::int64_t i = 0; i < m; ++i)
    for (std::int64_t j = 0; j <= std::min(i, n - 1); ++j) o[i * n + j] = da[i * n + j];
  return out;
}

}  // namespace cmanp
