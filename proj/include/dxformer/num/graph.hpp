// Reverse-mode differentiation over a per-example tape.
//
// A Graph records every op in creation order, so the tape is already a
// topological order: backward() walks it once in reverse. Parameters are
// referenced (not copied) and their gradients are gathered into a
// Gradients vector indexed like the owning ParameterSet, which lets several
// threads run independent graphs against the same read-only parameters.

#pragma once

#include <cstddef>
#include <functional>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "dxformer/num/tensor.hpp"

namespace dxformer::num {

/// Named, ordered list of trainable tensors.
class ParameterSet {
 public:
  std::size_t add(std::string name, Tensor value) {
    names_.push_back(std::move(name));
    values_.push_back(std::move(value));
    return values_.size() - 1;
  }

  std::size_t size() const noexcept { return values_.size(); }
  Tensor& operator[](std::size_t i) { return values_.at(i); }
  const Tensor& operator[](std::size_t i) const { return values_.at(i); }
  const std::string& name(std::size_t i) const { return names_.at(i); }
  const std::vector<Tensor>& values() const noexcept { return values_; }
  std::vector<Tensor>& values() noexcept { return values_; }

  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& t : values_) n += t.size();
    return n;
  }

  friend bool operator==(const ParameterSet&, const ParameterSet&) = default;

 private:
  std::vector<std::string> names_;
  std::vector<Tensor> values_;
};

/// Per-parameter gradient buffers; an empty tensor means "no gradient".
class Gradients {
 public:
  Gradients() = default;
  explicit Gradients(std::size_t n) : grads_(n) {}

  std::size_t size() const noexcept { return grads_.size(); }
  Tensor& operator[](std::size_t i) { return grads_.at(i); }
  const Tensor& operator[](std::size_t i) const { return grads_.at(i); }

  void accumulate(const Gradients& other) {
    if (grads_.size() < other.grads_.size()) grads_.resize(other.grads_.size());
    for (std::size_t i = 0; i < other.grads_.size(); ++i) {
      const auto& g = other.grads_[i];
      if (g.empty()) continue;
      if (grads_[i].empty()) {
        grads_[i] = g;
      } else {
        grads_[i] += g;
      }
    }
  }

  void scale(double s) {
    for (auto& g : grads_) g *= s;
  }

  double global_norm() const {
    double sq = 0.0;
    for (const auto& g : grads_)
      for (double x : g.data()) sq += x * x;
    return std::sqrt(sq);
  }

  /// Rescales so the global L2 norm is at most max_norm. Returns the pre-clip norm.
  double clip_global_norm(double max_norm) {
    const double norm = global_norm();
    if (norm > max_norm && norm > 0.0) scale(max_norm / norm);
    return norm;
  }

 private:
  std::vector<Tensor> grads_;
};

struct Var {
  std::size_t id = static_cast<std::size_t>(-1);
};

class Graph;

using BackwardFn = std::function<void(Graph&, std::size_t self)>;

class Graph {
 public:
  Graph() = default;
  explicit Graph(const ParameterSet& params) : params_(&params) {}

  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;
  Graph(Graph&&) = default;
  Graph& operator=(Graph&&) = default;

  Var constant(Tensor value) {
    nodes_.push_back(Node{std::move(value), nullptr, {}, {}, nullptr, kNoParam});
    return Var{nodes_.size() - 1};
  }

  /// Leaf for parameter `index` of the bound ParameterSet. Repeated calls reuse one node.
  Var param(std::size_t index) {
    if (params_ == nullptr) throw std::logic_error("graph has no parameter set bound");
    if (auto it = param_nodes_.find(index); it != param_nodes_.end()) return Var{it->second};
    nodes_.push_back(Node{{}, &(*params_)[index], {}, {}, nullptr, index});
    param_nodes_.emplace(index, nodes_.size() - 1);
    return Var{nodes_.size() - 1};
  }

  Var record(Tensor value, std::vector<std::size_t> parents, BackwardFn backward) {
    nodes_.push_back(Node{std::move(value), nullptr, {}, std::move(parents), std::move(backward),
                          kNoParam});
    return Var{nodes_.size() - 1};
  }

  const Tensor& value(Var v) const { return nodes_.at(v.id).value(); }
  const Tensor& value(std::size_t id) const { return nodes_[id].value(); }

  /// Gradient buffer for a node, allocated on first use with the node's shape.
  Tensor& grad(std::size_t id) {
    auto& n = nodes_[id];
    if (n.grad.empty()) {
      const auto& v = n.value();
      n.grad = Tensor(v.rows(), v.cols());
    }
    return n.grad;
  }
  const Tensor& grad(Var v) const { return nodes_.at(v.id).grad; }

  std::size_t size() const noexcept { return nodes_.size(); }

  void backward(Var loss) {
    if (loss.id >= nodes_.size()) throw std::invalid_argument("backward: unknown loss node");
    if (value(loss).size() != 1) throw std::invalid_argument("backward: loss must be scalar");
    if (!nodes_[loss.id].backward && nodes_[loss.id].param_index == kNoParam)
      throw std::invalid_argument("backward: loss is detached from the graph");
    for (auto& n : nodes_) n.grad = Tensor{};
    grad(loss.id)[0] = 1.0;
    for (std::size_t i = loss.id + 1; i-- > 0;) {
      auto& n = nodes_[i];
      if (n.grad.empty() || !n.backward) continue;
      n.backward(*this, i);
    }
    backward_done_ = true;
  }

  /// Gradients of every parameter touched by this graph, after backward().
  Gradients parameter_gradients() const {
    if (!backward_done_) throw std::logic_error("parameter_gradients before backward");
    Gradients out(params_ ? params_->size() : 0);
    for (const auto& [index, node] : param_nodes_) {
      if (!nodes_[node].grad.empty()) out[index] = nodes_[node].grad;
    }
    return out;
  }

 private:
  static constexpr std::size_t kNoParam = static_cast<std::size_t>(-1);

  struct Node {
    Tensor owned;
    const Tensor* ref;
    Tensor grad;
    std::vector<std::size_t> parents;
    BackwardFn backward;
    std::size_t param_index;

    const Tensor& value() const { return ref ? *ref : owned; }
  };

  const ParameterSet* params_ = nullptr;
  std::vector<Node> nodes_;
  std::unordered_map<std::size_t, std::size_t> param_nodes_;
  bool backward_done_ = false;
};

}  // namespace dxformer::num
