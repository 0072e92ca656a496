#include "cmanp/autodiff.hpp"

#include <algorithm>
#include <unordered_set>

#include "cmanp/tensor_ops.hpp"

namespace cmanp {

namespace {
thread_local std::uint64_t g_seq = 0;
}

const Tensor& Var::value() const {
  if (!node_) throw TensorError("value() on undefined Var");
  return node_->value;
}

bool Var::requires_grad() const { return node_ && node_->requires_grad; }

bool Var::is_leaf() const { return node_ && node_->leaf; }

Tensor Var::grad() const {
  if (!node_) throw TensorError("grad() on undefined Var");
  if (!node_->grad.has_storage()) return Tensor::zeros(node_->value.shape());
  return node_->grad;
}

Var make_leaf(Tensor value) {
  Var v;
  v.node_ = std::make_shared<detail::Node>();
  v.node_->value = std::move(value);
  v.node_->requires_grad = true;
  v.node_->leaf = true;
  v.node_->seq = ++g_seq;
  return v;
}

Var make_constant(Tensor value) {
  Var v;
  v.node_ = std::make_shared<detail::Node>();
  v.node_->value = std::move(value);
  v.node_->seq = ++g_seq;
  return v;
}

Var make_var(Tensor value, std::vector<Var> parents,
             std::function<void(const Tensor& gout)> backward_fn) {
  Var v;
  v.node_ = std::make_shared<detail::Node>();
  v.node_->value = std::move(value);
  v.node_->seq = ++g_seq;
  bool needs = false;
  for (const Var& p : parents) needs = needs || p.requires_grad();
  if (needs) {
    v.node_->requires_grad = true;
    v.node_->backward_fn = std::move(backward_fn);
    v.node_->parents.reserve(parents.size());
    for (Var& p : parents) v.node_->parents.push_back(p.shared_node());
  }
  return v;
}

void accumulate_grad(const Var& v, const Tensor& delta) {
  detail::Node* n = v.node();
  if (!n || !n->requires_grad) return;
  if (!delta.same_shape(n->value)) {
    throw TensorError("gradient shape " + shape_str(delta.shape()) +
                      " does not match value shape " + shape_str(n->value.shape()));
  }
  if (!n->grad.has_storage()) {
    n->grad = delta;
  } else {
    n->grad = add(n->grad, delta);
  }
}

Graph Graph::trace(const Var& root) {
  Graph g;
  g.root_ = root.shared_node();
  if (!g.root_ || !g.root_->requires_grad) return g;
  std::unordered_set<const detail::Node*> seen;
  std::vector<std::shared_ptr<detail::Node>> stack{g.root_};
  seen.insert(g.root_.get());
  while (!stack.empty()) {
    auto n = stack.back();
    stack.pop_back();
    g.order_.push_back(n);
    for (const auto& p : n->parents) {
      if (p->requires_grad && seen.insert(p.get()).second) stack.push_back(p);
    }
  }
  std::sort(g.order_.begin(), g.order_.end(),
            [](const auto& a, const auto& b) { return a->seq > b->seq; });
  return g;
}

void Graph::run_backward() {
  if (!root_) throw TensorError("backward on undefined Var");
  if (root_->value.numel() != 1) {
    throw TensorError("backward requires a scalar loss, got " + shape_str(root_->value.shape()));
  }
  if (!root_->requires_grad) {
    throw TensorError("backward on a value that depends on no leaf");
  }
  root_->grad = Tensor::full(root_->value.shape(), 1.0);
  for (const auto& n : order_) {
    if (n->backward_fn && n->grad.has_storage()) n->backward_fn(n->grad);
  }
}

std::size_t Graph::leaf_count() const {
  std::size_t k = 0;
  for (const auto& n : order_) k += n->leaf ? 1 : 0;
  return k;
}

void backward(const Var& loss) {
  Graph g = Graph::trace(loss);
  g.run_backward();
}

}  // namespace cmanp
