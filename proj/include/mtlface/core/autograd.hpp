#pragma once

// Define-by-run reverse-mode differentiation. Each op produces a Var whose
// node remembers its inputs and a closure that pushes the output gradient
// back into them. Leaves with requires_grad (parameters, probe inputs)
// accumulate gradients across backward() calls until zero_grad().

#include <functional>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "mtlface/core/tensor.hpp"

namespace mtlface {

template <typename T>
struct Node {
  Tensor<T> value;
  Tensor<T> grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node<T>>> inputs;
  std::function<void(Node<T>&)> backward;

  // Adds g into this node's gradient buffer, allocating it on first use.
  void accumulate(const Tensor<T>& g);
  // Returns the gradient buffer, allocating zeros on first use.
  Tensor<T>& grad_buffer();
};

bool grad_enabled();

/// Disables graph construction for the lifetime of the guard.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

template <typename T>
class Var {
 public:
  Var() = default;
  explicit Var(Tensor<T> value, bool requires_grad = false)
      : node_(std::make_shared<Node<T>>()) {
    node_->value = std::move(value);
    node_->requires_grad = requires_grad;
  }

  bool defined() const { return node_ != nullptr; }
  const Tensor<T>& value() const { return node_->value; }
  Tensor<T>& mutable_value() { return node_->value; }
  const Shape& shape() const { return node_->value.shape(); }
  std::int64_t dim(int i) const { return node_->value.dim(i); }
  std::size_t numel() const { return node_->value.numel(); }
  T item() const { return node_->value.item(); }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool r) { node_->requires_grad = r; }
  const Tensor<T>& grad() const { return node_->grad; }
  Tensor<T>& grad_buffer() { return node_->grad_buffer(); }
  void zero_grad() { node_->grad = Tensor<T>(); }

  /// Reverse sweep from this (scalar) value with seed gradient 1.
  void backward() const;
  /// Reverse sweep with an explicit seed gradient of the same shape.
  void backward(const Tensor<T>& seed) const;

  /// Same value, no graph history.
  Var detach() const { return Var(node_->value, false); }

  const std::shared_ptr<Node<T>>& node() const { return node_; }
  static Var from_node(std::shared_ptr<Node<T>> n) {
    Var v;
    v.node_ = std::move(n);
    return v;
  }

 private:
  std::shared_ptr<Node<T>> node_;
};

/// Builds the result of an op. When grad mode is on and any input requires a
/// gradient, the result records `inputs` and `backward`; otherwise it is a
/// plain constant.
template <typename T>
Var<T> make_result(Tensor<T> value, std::vector<Var<T>> inputs,
                   std::function<void(Node<T>&)> backward);

}  // namespace mtlface
