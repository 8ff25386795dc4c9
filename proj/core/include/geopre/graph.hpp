#pragma once

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "geopre/tensor.hpp"

namespace geopre {
namespace ag {

// Reverse-mode autodiff over float tensors. Each op appends a Node holding
// its output value and a closure that routes the output gradient to the
// inputs. Graphs are built per training step and torn down by backward().
//
// Determinism contract: every op kernel iterates in a fixed order and
// gradient accumulation follows the reverse topological order of
// construction, so identical graphs produce bit-identical values and
// gradients run to run.
struct Node {
  Tensor value;
  Tensor grad;  // allocated lazily during backward
  bool requires_grad = false;
  bool is_leaf = false;
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&)> backward_fn;

  std::int64_t numel() const { return value.numel(); }
  const std::vector<int>& shape() const { return value.shape(); }
};

using Var = std::shared_ptr<Node>;

// Leaf with requires_grad: trainable parameter. Gradients accumulate across
// backward() calls until zeroed by the optimizer.
Var parameter(Tensor value);
// Leaf without gradient.
Var constant(Tensor value);
// Non-leaf helper used by op implementations.
Var make_op(Tensor value, std::vector<Var> inputs, std::function<void(Node&)> backward_fn);

// Detached view of a value (no graph connection, shares nothing).
Var detach(const Var& v);

// Ensures grad storage exists (zero-filled) and returns it.
Tensor& ensure_grad(Node& n);

// Runs reverse-mode accumulation from a scalar root. Intermediate values and
// gradients are released as soon as their node has been processed; read any
// values you need for logging before calling this. Leaf gradients persist.
void backward(const Var& root);

// Frees a forward graph without running backward (e.g. eval-mode forwards
// that are only read). Safe on already-freed graphs.
void release_graph(const Var& root);

}  // namespace ag
}  // namespace geopre
