#pragma once

#include <cstddef>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "fedstlf/core/tensor.hpp"

namespace fedstlf {

/// A named trainable (or tracked, non-trainable) array owned by a layer.
struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;
  bool trainable = true;

  Parameter() = default;
  Parameter(std::string n, Tensor v, bool is_trainable = true)
      : name(std::move(n)), value(std::move(v)), trainable(is_trainable) {}

  void zero_grad() {
    if (grad.shape() != value.shape()) {
      grad = Tensor(value.shape());
    } else {
      grad.fill(0.0);
    }
  }
};

/// Handle to a node on a Tape.
struct Var {
  std::size_t id = 0;
};

/// Records tensor-level operations for one forward pass and replays their
/// adjoints in reverse. Nodes are appended in evaluation order, so the
/// record is already topologically sorted.
class Tape {
 public:
  using Backward = std::function<void(Tape&, const Tensor& out, const Tensor& out_grad)>;

  Tape() { nodes_.reserve(256); }
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// A value that receives no gradient.
  Var constant(Tensor value) {
    Node n;
    n.owned = std::move(value);
    nodes_.push_back(std::move(n));
    return Var{nodes_.size() - 1};
  }

  /// A parameter leaf. The tape reads the parameter's value in place and
  /// backward() accumulates into Parameter::grad.
  Var param(Parameter& p) {
    Node n;
    n.external = &p.value;
    n.param = &p;
    n.needs_grad = p.trainable;
    nodes_.push_back(std::move(n));
    return Var{nodes_.size() - 1};
  }

  /// A differentiable input leaf whose gradient can be read after backward.
  Var input(Tensor value) {
    Node n;
    n.owned = std::move(value);
    n.needs_grad = true;
    nodes_.push_back(std::move(n));
    return Var{nodes_.size() - 1};
  }

  /// Appends the result of an operation. `parents` determine whether the
  /// node participates in backprop at all.
  Var record(Tensor value, std::initializer_list<Var> parents, Backward backward) {
    Node n;
    n.owned = std::move(value);
    for (Var p : parents) n.needs_grad = n.needs_grad || nodes_[p.id].needs_grad;
    if (n.needs_grad) n.backward = std::move(backward);
    nodes_.push_back(std::move(n));
    return Var{nodes_.size() - 1};
  }

  const Tensor& value(Var v) const {
    const Node& n = nodes_[v.id];
    return n.external ? *n.external : n.owned;
  }

  const Shape& shape(Var v) const { return value(v).shape(); }

  bool needs_grad(Var v) const { return nodes_[v.id].needs_grad; }

  /// Gradient buffer for v, allocated as zeros on first use.
  Tensor& grad(Var v) {
    Node& n = nodes_[v.id];
    if (n.grad.empty()) n.grad = Tensor(value(v).shape());
    return n.grad;
  }

  bool has_grad(Var v) const { return !nodes_[v.id].grad.empty(); }

  std::size_t size() const noexcept { return nodes_.size(); }

  /// Seeds d(loss)/d(loss) = 1 and runs every recorded adjoint once, in
  /// reverse order. Parameter leaves add their gradient into the owning
  /// Parameter.
  void backward(Var loss) {
    if (value(loss).size() != 1) {
      throw DimensionError("backward needs a scalar loss, got shape " + shape_string(shape(loss)));
    }
    grad(loss)[0] = 1.0;
    for (std::size_t i = loss.id + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (n.grad.empty()) continue;
      if (n.backward) {
        // Adjoints only touch parent grads; nodes_ never grows here.
        n.backward(*this, n.external ? *n.external : n.owned, n.grad);
      } else if (n.param != nullptr && n.param->trainable) {
        Parameter& p = *n.param;
        if (p.grad.shape() != p.value.shape()) p.grad = Tensor(p.value.shape());
        auto dst = p.grad.values();
        auto src = n.grad.values();
        for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += src[k];
      }
    }
  }

 private:
  struct Node {
    Tensor owned;
    const Tensor* external = nullptr;
    Parameter* param = nullptr;
    Tensor grad;
    bool needs_grad = false;
    Backward backward;
  };

  std::vector<Node> nodes_;
};

}  // namespace fedstlf
