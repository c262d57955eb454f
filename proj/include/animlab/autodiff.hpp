#pragma once

#include <functional>
#include <memory>
#include <unordered_set>
#include <utility>
#include <vector>

#include "animlab/tensor.hpp"

namespace animlab::ad {

// Reverse-mode autodiff over whole tensors. Ops are coarse (conv, matmul,
// norm), so graphs stay small and the per-node overhead is irrelevant next
// to the GEMMs inside each op.

inline bool& grad_mode() {
  thread_local bool enabled = true;
  return enabled;
}

struct NoGrad {
  bool prev;
  NoGrad() : prev(grad_mode()) { grad_mode() = false; }
  ~NoGrad() { grad_mode() = prev; }
  NoGrad(const NoGrad&) = delete;
  NoGrad& operator=(const NoGrad&) = delete;
};

struct Node {
  Tensor value;
  Tensor grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  // Reads this->grad and accumulates into parents' grads.
  std::function<void(Node&)> backward_fn;

  void ensure_grad() {
    if (!grad.same_shape(value)) grad = zeros_like(value);
  }
};

class Var {
 public:
  Var() = default;
  explicit Var(std::shared_ptr<Node> n) : n_(std::move(n)) {}

  static Var leaf(Tensor value, bool requires_grad = false) {
    auto n = std::make_shared<Node>();
    n->value = std::move(value);
    n->requires_grad = requires_grad;
    return Var(n);
  }

  bool defined() const { return static_cast<bool>(n_); }
  const Tensor& val() const { return n_->value; }
  Tensor& mutable_value() { return n_->value; }
  const Tensor& grad() const { return n_->grad; }
  bool has_grad() const { return n_->grad.same_shape(n_->value); }
  bool requires_grad() const { return n_ && n_->requires_grad; }
  void set_requires_grad(bool v) {
    ANIMLAB_REQUIRE(n_ && n_->parents.empty(), "requires_grad is only settable on leaves");
    n_->requires_grad = v;
  }
  void zero_grad() { n_->grad = Tensor(); }
  const std::shared_ptr<Node>& node() const { return n_; }

  Var detach() const { return leaf(n_->value, false); }

  const Shape& shape() const { return n_->value.shape(); }
  int64_t dim(int64_t i) const { return n_->value.dim(i); }
  int64_t numel() const { return n_->value.numel(); }

 private:
  std::shared_ptr<Node> n_;
};

// Accumulate g into the node behind `parent` if it participates in grad flow.
inline void accumulate(const std::shared_ptr<Node>& parent, const Tensor& g) {
  parent->ensure_grad();
  double* dst = parent->grad.data();
  const double* src = g.data();
  for (int64_t i = 0; i < g.numel(); ++i) dst[i] += src[i];
}

inline bool needs_grad(const std::shared_ptr<Node>& n) { return n->requires_grad; }

// Build an op node. Records the graph only while grad mode is on and some
// input needs gradients; otherwise the result is a constant leaf.
inline Var make_op(Tensor value, std::vector<Var> inputs, std::function<void(Node&)> backward_fn) {
  bool track = grad_mode();
  if (track) {
    bool any = false;
    for (const Var& v : inputs) any = any || v.requires_grad();
    track = any;
  }
  if (!track) return Var::leaf(std::move(value), false);
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->requires_grad = true;
  n->parents.reserve(inputs.size());
  for (Var& v : inputs) n->parents.push_back(v.node());
  n->backward_fn = std::move(backward_fn);
  return Var(n);
}

// Backpropagate from a scalar (or from `seed` matching root's shape).
inline void backward(const Var& root, const Tensor* seed = nullptr) {
  ANIMLAB_REQUIRE(root.defined(), "backward on undefined Var");
  ANIMLAB_REQUIRE(root.requires_grad(), "backward on a graph with no trainable inputs");
  if (seed) {
    check_same_shape(root.val(), *seed, "backward seed");
  } else {
    ANIMLAB_REQUIRE(root.numel() == 1, "backward without seed needs a scalar root, got ",
                    shape_str(root.shape()));
  }

  // Post-order DFS over grad-requiring ancestors.
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, size_t>> stack;
  stack.push_back({root.node().get(), 0});
  seen.insert(root.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* p = node->parents[next++].get();
      if (p->requires_grad && !seen.count(p)) {
        seen.insert(p);
        stack.push_back({p, 0});
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  root.node()->ensure_grad();
  if (seed) {
    root.node()->grad = *seed;
  } else {
    root.node()->grad[0] += 1.0;
  }
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backward_fn) {
      n->ensure_grad();
      n->backward_fn(*n);
    }
  }
}

}  // namespace animlab::ad
