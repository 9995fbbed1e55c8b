#pragma once

#include <cstddef>
#include <functional>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "relconv/error.hpp"
#include "relconv/tensor.hpp"

namespace relconv {

template <typename T>
struct AdamState {
  Tensor<T> m;
  Tensor<T> v;
  std::size_t step = 0;
};

/// A trainable tensor with its accumulated gradient and optimizer state.
template <typename T>
struct Parameter {
  std::string name;
  Tensor<T> value;
  std::optional<Tensor<T>> grad;
  AdamState<T> adam;

  Parameter() = default;
  Parameter(std::string n, Tensor<T> v) : name(std::move(n)), value(std::move(v)) {}

  void zero_grad() { grad.reset(); }
};

template <typename T>
class Tape;

/// Handle to a value recorded on a Tape.
template <typename T>
class Var {
 public:
  Var() = default;
  Var(Tape<T>* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape<T>& tape() const { return *tape_; }
  std::size_t id() const noexcept { return id_; }
  const Tensor<T>& value() const { return tape_->value(*this); }
  const Shape& shape() const { return value().shape(); }
  bool requires_grad() const { return tape_->requires_grad(*this); }

 private:
  Tape<T>* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// Records forward values and backward closures; backward() replays them in
/// reverse order. Gradients of a value used several times are summed.
template <typename T>
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, const Tensor<T>& out_grad)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var<T> constant(Tensor<T> value) { return push(std::move(value), false, nullptr, nullptr); }

  Var<T> leaf(Parameter<T>& param) { return push(param.value, true, nullptr, &param); }

  /// Leaf with a gradient slot that is not tied to a Parameter.
  Var<T> variable(Tensor<T> value) { return push(std::move(value), true, nullptr, nullptr); }

  Var<T> record(Tensor<T> value, bool requires_grad, BackwardFn backward) {
    return push(std::move(value), requires_grad, requires_grad ? std::move(backward) : nullptr, nullptr);
  }

  const Tensor<T>& value(Var<T> v) const { return nodes_.at(v.id()).value; }
  bool requires_grad(Var<T> v) const { return nodes_.at(v.id()).requires_grad; }

  /// Gradient of a node after backward(); empty optional if nothing reached it.
  const std::optional<Tensor<T>>& grad(Var<T> v) const { return nodes_.at(v.id()).grad; }

  /// Adds `g` to the gradient slot of `v`. No-op for constants.
  void accumulate(Var<T> v, const Tensor<T>& g) {
    Node& node = nodes_.at(v.id());
    if (!node.requires_grad) return;
    if (!node.grad) {
      node.grad = g;
      return;
    }
    *node.grad += g;
  }

  /// Mutable gradient slot for `v`, zero-initialized on first access.
  Tensor<T>& grad_slot(Var<T> v) {
    Node& node = nodes_.at(v.id());
    if (!node.grad) node.grad = Tensor<T>(node.value.shape());
    return *node.grad;
  }

  void backward(Var<T> loss) {
    Node& root = nodes_.at(loss.id());
    if (root.value.size() != 1) {
      throw ShapeError("backward() requires a scalar loss, got shape " + shape_string(root.value.shape()));
    }
    if (!root.requires_grad) return;
    root.grad = Tensor<T>(root.value.shape(), T{1});
    for (std::size_t i = loss.id() + 1; i-- > 0;) {
      Node& node = nodes_[i];
      if (!node.requires_grad || !node.grad) continue;
      // Inputs always precede their consumer, so the closure never touches node i.
      if (node.backward) node.backward(*this, *node.grad);
      if (node.param) {
        if (!node.param->grad) {
          node.param->grad = *node.grad;
        } else {
          *node.param->grad += *node.grad;
        }
      }
    }
  }

  std::size_t size() const noexcept { return nodes_.size(); }

 private:
  struct Node {
    Tensor<T> value;
    bool requires_grad = false;
    BackwardFn backward;
    Parameter<T>* param = nullptr;
    std::optional<Tensor<T>> grad;
  };

  Var<T> push(Tensor<T> value, bool requires_grad, BackwardFn backward, Parameter<T>* param) {
    nodes_.push_back(Node{std::move(value), requires_grad, std::move(backward), param, std::nullopt});
    return Var<T>(this, nodes_.size() - 1);
  }

  std::vector<Node> nodes_;
};

}  // namespace relconv
