#pragma once

#include <functional>
#include <initializer_list>
#include <vector>

#include "hvae/tensor.hpp"

namespace hvae::nn {

/// Handle to a node of one Graph.
struct Var {
  int id = -1;
  bool valid() const noexcept { return id >= 0; }
};

/// Tape of primitive operations recorded during one forward pass.
///
/// Nodes are appended in evaluation order, so the tape is already
/// topologically sorted; `backward` walks it in exact reverse, which makes
/// the order of gradient accumulation (and therefore the floating-point
/// result) deterministic.
template <typename T>
class Graph {
 public:
  /// Propagates the node's output gradient into its inputs.
  using BackwardFn = std::function<void(Graph&, const Tensor<T>& grad_out)>;

  Var constant(Tensor<T> value);
  /// Leaf whose gradient is retained after `backward`.
  Var parameter(Tensor<T> value);

  /// Appends an op node. `fn` runs only if some input requires a gradient.
  Var record(Tensor<T> value, std::initializer_list<Var> inputs, BackwardFn fn);
  Var record(Tensor<T> value, const std::vector<Var>& inputs, BackwardFn fn);

  const Tensor<T>& value(Var v) const { return node(v).value; }
  const Shape& shape(Var v) const { return node(v).value.shape(); }
  bool requires_grad(Var v) const { return node(v).requires_grad; }

  /// Gradient buffer of `v` for accumulation inside a BackwardFn, or nullptr
  /// when `v` does not take part in differentiation.
  Tensor<T>* accumulator(Var v);

  /// Gradient of the last `backward` call; zeros if the node was unreached.
  Tensor<T> grad(Var v) const;

  /// Seeds d(loss)/d(loss) = 1 on a single-element node and back-propagates.
  void backward(Var loss);

  std::size_t size() const noexcept { return nodes_.size(); }

 private:
  struct Node {
    Tensor<T> value;
    Tensor<T> grad;
    bool has_grad = false;
    bool requires_grad = false;
    BackwardFn backward;
  };

  const Node& node(Var v) const;
  Node& node(Var v);

  std::vector<Node> nodes_;
};

extern template class Graph<float>;
extern template class Graph<double>;

}  // namespace hvae::nn
