#include "geopre/graph.hpp"

#include <unordered_set>

namespace geopre {
namespace ag {

Var parameter(Tensor value) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->requires_grad = true;
  n->is_leaf = true;
  return n;
}

Var constant(Tensor value) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->is_leaf = true;
  return n;
}

Var make_op(Tensor value, std::vector<Var> inputs, std::function<void(Node&)> backward_fn) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  for (const auto& in : inputs) {
    if (in->requires_grad) {
      n->requires_grad = true;
      break;
    }
  }
  n->inputs = std::move(inputs);
  if (n->requires_grad) n->backward_fn = std::move(backward_fn);
  return n;
}

Var detach(const Var& v) {
  auto n = std::make_shared<Node>();
  n->value = v->value;
  n->is_leaf = true;
  return n;
}

Tensor& ensure_grad(Node& n) {
  if (n.grad.empty()) n.grad = Tensor::zeros(n.value.shape());
  return n.grad;
}

namespace {

// Iterative post-order DFS; returns nodes in topological order (inputs first).
void topo_sort(const Var& root, std::vector<Node*>& order) {
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, std::size_t>> stack;
  stack.emplace_back(root.get(), 0);
  visited.insert(root.get());
  while (!stack.empty()) {
    auto& [node, idx] = stack.back();
    if (idx < node->inputs.size()) {
      Node* in = node->inputs[idx].get();
      ++idx;
      if (in->requires_grad && !visited.count(in)) {
        visited.insert(in);
        stack.emplace_back(in, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
}

}  // namespace

void backward(const Var& root) {
  check_arg(root != nullptr && root->numel() == 1, "backward: root must be a scalar");
  if (!root->requires_grad) {
    release_graph(root);
    return;
  }
  std::vector<Node*> order;
  topo_sort(root, order);
  ensure_grad(*root).fill(1.0f);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backward_fn) n->backward_fn(*n);
    if (!n->is_leaf) {
      n->value.release();
      n->grad.release();
      n->backward_fn = nullptr;
      n->inputs.clear();
    }
  }
}

void release_graph(const Var& root) {
  if (!root) return;
  // Iterative teardown; clearing inputs drops shared_ptr references so deep
  // graphs do not recurse in ~Node.
  std::vector<Var> stack{root};
  std::unordered_set<Node*> seen{root.get()};
  while (!stack.empty()) {
    Var n = stack.back();
    stack.pop_back();
    for (auto& in : n->inputs) {
      if (seen.insert(in.get()).second) stack.push_back(in);
    }
    if (!n->is_leaf) {
      n->value.release();
      n->grad.release();
    }
    n->backward_fn = nullptr;
    n->inputs.clear();
  }
}

}  // namespace ag
}  // namespace geopre
