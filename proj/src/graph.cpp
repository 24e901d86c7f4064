#include "hvae/graph.hpp"

#include <string>

namespace hvae::nn {

template <typename T>
const typename Graph<T>::Node& Graph<T>::node(Var v) const {
  if (v.id < 0 || v.id >= static_cast<int>(nodes_.size())) {
    throw IndexError("Graph: invalid variable " + std::to_string(v.id));
  }
  return nodes_[static_cast<std::size_t>(v.id)];
}

template <typename T>
typename Graph<T>::Node& Graph<T>::node(Var v) {
  return const_cast<Node&>(static_cast<const Graph&>(*this).node(v));
}

template <typename T>
Var Graph<T>::constant(Tensor<T> value) {
  nodes_.push_back(Node{std::move(value), {}, false, false, {}});
  return Var{static_cast<int>(nodes_.size()) - 1};
}

template <typename T>
Var Graph<T>::parameter(Tensor<T> value) {
  nodes_.push_back(Node{std::move(value), {}, false, true, {}});
  return Var{static_cast<int>(nodes_.size()) - 1};
}

template <typename T>
Var Graph<T>::record(Tensor<T> value, std::initializer_list<Var> inputs, BackwardFn fn) {
  return record(std::move(value), std::vector<Var>(inputs), std::move(fn));
}

template <typename T>
Var Graph<T>::record(Tensor<T> value, const std::vector<Var>& inputs, BackwardFn fn) {
#ifndef NDEBUG
  if (!value.all_finite()) throw DomainError("Graph: op produced non-finite values");
#endif
  bool needs = false;
  for (const Var in : inputs) needs = needs || node(in).requires_grad;
  nodes_.push_back(Node{std::move(value), {}, false, needs, needs ? std::move(fn) : BackwardFn{}});
  return Var{static_cast<int>(nodes_.size()) - 1};
}

template <typename T>
Tensor<T>* Graph<T>::accumulator(Var v) {
  Node& n = node(v);
  if (!n.requires_grad) return nullptr;
  if (!n.has_grad) {
    n.grad = Tensor<T>(n.value.shape());
    n.has_grad = true;
  }
  return &n.grad;
}

template <typename T>
Tensor<T> Graph<T>::grad(Var v) const {
  const Node& n = node(v);
  if (!n.has_grad) return Tensor<T>(n.value.shape());
  return n.grad;
}

template <typename T>
void Graph<T>::backward(Var loss) {
  Node& root = node(loss);
  if (root.value.size() != 1) {
    throw ShapeError("backward: loss must be a single element, got " +
                     shape_str(root.value.shape()));
  }
  for (auto& n : nodes_) {
    if (n.has_grad) n.grad.fill(T(0));
  }
  if (!root.requires_grad) return;
  accumulator(loss)->fill(T(1));
  for (int i = loss.id; i >= 0; --i) {
    Node& n = nodes_[static_cast<std::size_t>(i)];
    if (n.has_grad && n.backward) n.backward(*this, n.grad);
  }
}

template class Graph<float>;
template class Graph<double>;

}  // namespace hvae::nn
