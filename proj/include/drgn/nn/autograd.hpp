#pragma once

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "drgn/nn/tensor.hpp"

namespace drgn::nn {

// One vertex of the reverse-mode graph. Leaves either carry trainable
// parameters (requires_grad) or constants; interior nodes own a closure that
// propagates their gradient to their parents.
struct Node {
  Tensor value;
  Tensor grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  // Receives the node itself: `self.grad` is the incoming gradient and
  // `self.value` the forward output.
  std::function<void(const Node& self)> backward;
};

// Adds `g` into node.grad, allocating a zero buffer on first use.
void accumulate_grad(Node& node, const Tensor& g);
// Returns node.grad, allocating a zero buffer of the node's shape if needed.
Tensor& grad_buffer(Node& node);

class Var {
 public:
  Var() = default;
  explicit Var(Tensor value, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Tensor& value() const { return node_->value; }
  Tensor& mutable_value() { return node_->value; }
  const Shape& shape() const { return node_->value.shape(); }
  int dim(int axis) const { return node_->value.dim(axis); }

  bool requires_grad() const { return node_ && node_->requires_grad; }
  void set_requires_grad(bool on) { node_->requires_grad = on; }

  bool has_grad() const { return node_ && !node_->grad.empty(); }
  const Tensor& grad() const { return node_->grad; }
  void zero_grad() { node_->grad = Tensor(); }

  // A new constant leaf holding a copy of this value.
  Var detach() const;

  const std::shared_ptr<Node>& node() const { return node_; }

 private:
  std::shared_ptr<Node> node_;
};

// Builds an op result. The closure is recorded only when gradient mode is on
// and at least one input requires a gradient.
Var make_result(Tensor value, const std::vector<Var>& inputs,
                std::function<void(const Node&)> backward);

// Reverse pass from a single-element root. Interior gradients are released
// once propagated; leaf gradients accumulate.
void backward(const Var& root);

bool grad_enabled();

// Disables graph recording for the lifetime of the guard.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

}  // namespace drgn::nn
