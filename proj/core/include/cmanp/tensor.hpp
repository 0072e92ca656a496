#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace cmanp {

class TensorError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

using Shape = std::vector<std::int64_t>;

std::int64_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

// Dense row-major tensor of 64-bit floats. Values are immutable once a tensor
// has been handed out; copies share the underlying buffer. Rank 0 is a scalar.
class Tensor {
 public:
  Tensor() = default;  // no storage, shape {0}

  static Tensor zeros(Shape shape);
  static Tensor full(Shape shape, double value);
  static Tensor from(Shape shape, std::vector<double> values);
  static Tensor scalar(double value);

  const Shape& shape() const { return shape_; }
  std::int64_t rank() const { return static_cast<std::int64_t>(shape_.size()); }
  std::int64_t numel() const;
  std::int64_t extent(std::int64_t axis) const;
  bool has_storage() const { return storage_ != nullptr; }

  std::span<const double> data() const;
  // Writable pointer for filling a freshly created tensor. Requires sole
  // ownership of the buffer; sharing starts once the tensor is copied.
  double* mutable_data();

  double at_flat(std::int64_t i) const;
  double operator()(std::int64_t i) const;
  double operator()(std::int64_t i, std::int64_t j) const;
  double operator()(std::int64_t i, std::int64_t j, std::int64_t k) const;

  // Shares storage; total element count must match.
  Tensor reshape(Shape shape) const;

  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }
  bool all_finite() const;

 private:
  struct Storage;
  std::shared_ptr<Storage> storage_;
  Shape shape_{0};
};

// Throws TensorError naming `op` if any element is non-finite.
void check_finite(const Tensor& t, const char* op);

bool bitwise_equal(const Tensor& a, const Tensor& b);
double max_abs_diff(const Tensor& a, const Tensor& b);

// FNV-1a over shapes and payload bytes; used to detect stale caches whose
// producing weights have changed.
std::uint64_t fingerprint_tensors(std::span<const Tensor* const> tensors);
std::uint64_t fingerprint_tensors(std::initializer_list<const Tensor*> tensors);

}  // namespace cmanp
