#include "cmanp/tensor.hpp"

#include <cmath>
#include <cstring>
#include <sstream>

#include "cmanp/instrument.hpp"

namespace cmanp {

struct Tensor::Storage {
  std::vector<double> v;

  explicit Storage(std::size_t n) : v(n) { instr::on_alloc(n * sizeof(double)); }
  explicit Storage(std::vector<double>&& src) : v(std::move(src)) {
    instr::on_alloc(v.size() * sizeof(double));
  }
  ~Storage() { instr::on_free(v.size() * sizeof(double)); }

  Storage(const Storage&) = delete;
  Storage& operator=(const Storage&) = delete;
};

std::int64_t shape_numel(const Shape& shape) {
  std::int64_t n = 1;
  for (std::int64_t e : shape) {
    if (e < 0) throw TensorError("negative extent in shape " + shape_str(shape));
    n *= e;
  }
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

Tensor Tensor::zeros(Shape shape) {
  Tensor t;
  const std::int64_t n = shape_numel(shape);
  t.storage_ = std::make_shared<Storage>(static_cast<std::size_t>(n));
  t.shape_ = std::move(shape);
  return t;
}

Tensor Tensor::full(Shape shape, double value) {
  Tensor t = zeros(std::move(shape));
  for (double& x : t.storage_->v) x = value;
  return t;
}

Tensor Tensor::from(Shape shape, std::vector<double> values) {
  const std::int64_t n = shape_numel(shape);
  if (n != static_cast<std::int64_t>(values.size())) {
    throw TensorError("data length " + std::to_string(values.size()) +
                      " does not match shape " + shape_str(shape));
  }
  Tensor t;
  t.storage_ = std::make_shared<Storage>(std::move(values));
  t.shape_ = std::move(shape);
  return t;
}

Tensor Tensor::scalar(double value) { return from({}, {value}); }

std::int64_t Tensor::numel() const { return storage_ ? static_cast<std::int64_t>(storage_->v.size()) : 0; }

std::int64_t Tensor::extent(std::int64_t axis) const {
  if (axis < 0 || axis >= rank()) {
    throw TensorError("axis " + std::to_string(axis) + " out of range for " + shape_str(shape_));
  }
  return shape_[static_cast<std::size_t>(axis)];
}

std::span<const double> Tensor::data() const {
  if (!storage_) return {};
  return {storage_->v.data(), storage_->v.size()};
}

double* Tensor::mutable_data() {
  if (!storage_) throw TensorError("mutable_data on empty tensor");
  if (storage_.use_count() != 1) throw TensorError("mutable_data on shared tensor buffer");
  return storage_->v.data();
}

double Tensor::at_flat(std::int64_t i) const {
  if (!storage_ || i < 0 || i >= numel()) throw TensorError("flat index out of range");
  return storage_->v[static_cast<std::size_t>(i)];
}

double Tensor::operator()(std::int64_t i) const {
  if (rank() != 1) throw TensorError("1-d access on tensor " + shape_str(shape_));
  return at_flat(i);
}

double Tensor::operator()(std::int64_t i, std::int64_t j) const {
  if (rank() != 2) throw TensorError("2-d access on tensor " + shape_str(shape_));
  return at_flat(i * shape_[1] + j);
}

double Tensor::operator()(std::int64_t i, std::int64_t j, std::int64_t k) const {
  if (rank() != 3) throw TensorError("3-d access on tensor " + shape_str(shape_));
  return at_flat((i * shape_[1] + j) * shape_[2] + k);
}

Tensor Tensor::reshape(Shape shape) const {
  if (shape_numel(shape) != numel()) {
    throw TensorError("reshape " + shape_str(shape_) + " -> " + shape_str(shape) +
                      " changes element count");
  }
  Tensor t;
  t.storage_ = storage_;
  t.shape_ = std::move(shape);
  return t;
}

bool Tensor::all_finite() const {
  for (double x : data()) {
    if (!std::isfinite(x)) return false;
  }
  return true;
}

void check_finite(const Tensor& t, const char* op) {
  if (!t.all_finite()) {
    throw TensorError(std::string(op) + " produced a non-finite value in tensor " +
                      shape_str(t.shape()));
  }
}

bool bitwise_equal(const Tensor& a, const Tensor& b) {
  if (!a.same_shape(b)) return false;
  auto da = a.data();
  auto db = b.data();
  for (std::size_t i = 0; i < da.size(); ++i) {
    // Bit-level comparison: distinguishes -0.0 and matches NaN payloads.
    if (std::memcmp(&da[i], &db[i], sizeof(double)) != 0) return false;
  }
  return true;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  if (!a.same_shape(b)) throw TensorError("max_abs_diff on mismatched shapes");
  auto da = a.data();
  auto db = b.data();
  double m = 0.0;
  for (std::size_t i = 0; i < da.size(); ++i) m = std::max(m, std::abs(da[i] - db[i]));
  return m;
}

namespace {

// FNV-1a folded over 64-bit words; an internal fingerprint, not a wire format.
void fnv_word(std::uint64_t& h, std::uint64_t w) {
  h ^= w;
  h *= 1099511628211ULL;
}

}  // namespace

std::uint64_t fingerprint_tensors(std::span<const Tensor* const> tensors) {
  std::uint64_t h = 1469598103934665603ULL;
  for (const Tensor* t : tensors) {
    for (std::int64_t e : t->shape()) fnv_word(h, static_cast<std::uint64_t>(e));
    for (double x : t->data()) {
      std::uint64_t w;
      std::memcpy(&w, &x, sizeof(w));
      fnv_word(h, w);
    }
  }
  return h;
}

std::uint64_t fingerprint_tensors(std::initializer_list<const Tensor*> tensors) {
  return fingerprint_tensors(std::span<const Tensor* const>(tensors.begin(), tensors.size()));
}

}  // namespace cmanp
