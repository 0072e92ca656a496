#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <vector>

#include "cmanp/tensor.hpp"

namespace cmanp {

namespace detail {
struct Node;
}

// Handle into the recorded computation. Vars are cheap to copy; the recorded
// structure is a DAG of shared nodes. Operations on constants record no
// parent links, so intermediate values are released as soon as the last
// handle goes out of scope.
class Var {
 public:
  Var() = default;

  bool defined() const { return node_ != nullptr; }
  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  bool requires_grad() const;
  bool is_leaf() const;
  // Accumulated gradient; zeros of the value's shape if nothing reached it.
  Tensor grad() const;

  detail::Node* node() const { return node_.get(); }
  std::shared_ptr<detail::Node> shared_node() const { return node_; }

 private:
  friend Var make_leaf(Tensor);
  friend Var make_constant(Tensor);
  friend Var make_var(Tensor, std::vector<Var>, std::function<void(const Tensor&)>);
  std::shared_ptr<detail::Node> node_;
};

namespace detail {
struct Node {
  Tensor value;
  Tensor grad;  // unallocated until the first accumulation
  bool requires_grad = false;
  bool leaf = false;
  std::uint64_t seq = 0;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(const Tensor& gout)> backward_fn;
};
}  // namespace detail

Var make_leaf(Tensor value);
Var make_constant(Tensor value);

// Builds an op result. When no parent requires a gradient the links and
// backward function are dropped entirely.
Var make_var(Tensor value, std::vector<Var> parents,
             std::function<void(const Tensor& gout)> backward_fn);

void accumulate_grad(const Var& v, const Tensor& delta);

// Reverse-topological view of everything a root value depends on. Tracing
// collects only gradient-bearing nodes; the backward pass visits each exactly
// once in descending creation order.
class Graph {
 public:
  static Graph trace(const Var& root);

  // Seeds the root with a unit gradient and propagates. Root must be scalar.
  void run_backward();

  std::size_t node_count() const { return order_.size(); }
  std::size_t leaf_count() const;

 private:
  std::shared_ptr<detail::Node> root_;
  std::vector<std::shared_ptr<detail::Node>> order_;  // descending seq
};

// trace + run_backward in one call.
void backward(const Var& loss);

}  // namespace cmanp
