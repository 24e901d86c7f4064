#pragma once

#include <map>
#include <string>
#include <vector>

#include "hvae/graph.hpp"

namespace hvae::nn {

/// Named trainable tensors in registration order.
template <typename T>
class ParameterStore {
 public:
  void add(const std::string& name, Tensor<T> value) {
    if (index_.contains(name)) throw ContractError("ParameterStore: duplicate parameter '" + name + "'");
    index_.emplace(name, tensors_.size());
    names_.push_back(name);
    tensors_.push_back(std::move(value));
  }

  bool contains(const std::string& name) const { return index_.contains(name); }

  const Tensor<T>& get(const std::string& name) const { return tensors_[position(name)]; }
  Tensor<T>& get(const std::string& name) { return tensors_[position(name)]; }

  std::size_t position(const std::string& name) const {
    const auto it = index_.find(name);
    if (it == index_.end()) throw IndexError("ParameterStore: no parameter '" + name + "'");
    return it->second;
  }

  const std::vector<std::string>& names() const noexcept { return names_; }
  std::vector<Tensor<T>>& tensors() noexcept { return tensors_; }
  const std::vector<Tensor<T>>& tensors() const noexcept { return tensors_; }
  std::size_t size() const noexcept { return tensors_.size(); }

  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& t : tensors_) n += t.size();
    return n;
  }

  template <typename U>
  ParameterStore<U> cast() const {
    ParameterStore<U> out;
    for (std::size_t i = 0; i < tensors_.size(); ++i) out.add(names_[i], tensors_[i].template cast<U>());
    return out;
  }

  bool operator==(const ParameterStore& other) const {
    return names_ == other.names_ && tensors_ == other.tensors_;
  }

 private:
  std::vector<std::string> names_;
  std::vector<Tensor<T>> tensors_;
  std::map<std::string, std::size_t> index_;
};

/// Graph leaves for every tensor of a store, addressable by name.
template <typename T>
class BoundParameters {
 public:
  /// `trainable` = false binds constants, skipping all gradient bookkeeping.
  BoundParameters(Graph<T>& g, const ParameterStore<T>& store, bool trainable) : store_(&store) {
    vars_.reserve(store.size());
    for (const auto& t : store.tensors()) vars_.push_back(trainable ? g.parameter(t) : g.constant(t));
  }

  /// Adopts leaves created elsewhere, one per tensor in store order.
  BoundParameters(const ParameterStore<T>& store, std::vector<Var> vars) : store_(&store), vars_(std::move(vars)) {
    if (vars_.size() != store.size()) throw ShapeError("BoundParameters: one Var per tensor is required");
  }
  Var operator[](const std::string& name) const { return vars_[store_->position(name)]; }
  const std::vector<Var>& vars() const noexcept { return vars_; }

  /// Gradients in store order after `g.backward`.
  std::vector<Tensor<T>> gradients(const Graph<T>& g) const {
    std::vector<Tensor<T>> out;
    out.reserve(vars_.size());
    for (const Var v : vars_) out.push_back(g.grad(v));
    return out;
  }

 private:
  const ParameterStore<T>* store_;
  std::vector<Var> vars_;
};

}  // namespace hvae::nn
