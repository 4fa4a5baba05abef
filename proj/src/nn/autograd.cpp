#include "drgn/nn/autograd.hpp"

#include <unordered_set>

#include "drgn/core/errors.hpp"

namespace drgn::nn {

namespace {
thread_local bool g_grad_enabled = true;
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

Tensor& grad_buffer(Node& node) {
  if (node.grad.empty()) node.grad = Tensor(node.value.shape(), 0.0);
  return node.grad;
}

void accumulate_grad(Node& node, const Tensor& g) {
  if (!node.requires_grad) return;
  if (g.size() != node.value.size()) {
    throw ShapeError("gradient " + to_string(g.shape()) + " does not match " +
                     to_string(node.value.shape()));
  }
  if (node.grad.empty()) {
    node.grad = Tensor(node.value.shape(), g.storage());
    return;
  }
  double* dst = node.grad.data();
  const double* src = g.data();
  for (std::size_t i = 0; i < g.size(); ++i) dst[i] += src[i];
}

Var::Var(Tensor value, bool requires_grad) : node_(std::make_shared<Node>()) {
  node_->value = std::move(value);
  node_->requires_grad = requires_grad;
}

Var Var::detach() const { return Var(node_->value, false); }

Var make_result(Tensor value, const std::vector<Var>& inputs,
                std::function<void(const Node&)> backward_fn) {
  Var out(std::move(value), false);
  if (!g_grad_enabled) return out;
  bool any = false;
  for (const auto& in : inputs) any = any || in.requires_grad();
  if (!any) return out;
  auto& node = *out.node();
  node.requires_grad = true;
  for (const auto& in : inputs) {
    if (in.requires_grad()) node.parents.push_back(in.node());
  }
  node.backward = std::move(backward_fn);
  return out;
}

void backward(const Var& root) {
  if (!root.requires_grad()) return;
  if (root.value().size() != 1) {
    throw ShapeError("backward() needs a single-element root, got " +
                     to_string(root.shape()));
  }
  // Iterative post-order DFS gives a topological order (parents before child).
  // Owning pointers: clearing a node's parents below must not free nodes that
  // are still waiting for their turn.
  std::vector<std::shared_ptr<Node>> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<std::shared_ptr<Node>, std::size_t>> stack;
  stack.emplace_back(root.node(), 0);
  visited.insert(root.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      const auto& parent = node->parents[next++];
      if (parent->requires_grad && !visited.count(parent.get())) {
        visited.insert(parent.get());
        stack.emplace_back(parent, 0);
      }
    } else {
      order.push_back(std::move(node));
      stack.pop_back();
    }
  }

  accumulate_grad(*root.node(), Tensor(root.shape(), 1.0));
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* node = it->get();
    if (!node->backward) continue;
    if (!node->grad.empty()) node->backward(*node);
    node->grad = Tensor();
    node->backward = nullptr;
    node->parents.clear();
  }
}

}  // namespace drgn::nn
