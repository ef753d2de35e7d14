#include "mtlface/core/autograd.hpp"

#include <unordered_set>

#include "mtlface/kernels/kernels.hpp"

namespace mtlface {
namespace {
thread_local bool g_grad_enabled = true;
}  // namespace

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) {
  g_grad_enabled = false;
}
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

template <typename T>
Tensor<T>& Node<T>::grad_buffer() {
  if (!grad.defined() || grad.shape() != value.shape())
    grad = Tensor<T>(value.shape());
  return grad;
}

template <typename T>
void Node<T>::accumulate(const Tensor<T>& g) {
  if (g.numel() != value.numel())
    throw ShapeError("gradient " + shape_str(g.shape()) + " for value " +
                     shape_str(value.shape()));
  if (!grad.defined()) {
    grad = g.clone().reshape(value.shape());
    return;
  }
  kernels::axpy<T>(g.numel(), T(1), g.data(), grad.data());
}

template <typename T>
Var<T> make_result(Tensor<T> value, std::vector<Var<T>> inputs,
                   std::function<void(Node<T>&)> backward) {
  bool needs = false;
  if (grad_enabled()) {
    for (const auto& in : inputs)
      if (in.defined() && in.requires_grad()) needs = true;
  }
  Var<T> out(std::move(value), needs);
  if (needs) {
    auto& node = *out.node();
    node.inputs.reserve(inputs.size());
    for (auto& in : inputs) node.inputs.push_back(in.node());
    node.backward = std::move(backward);
  }
  return out;
}

template <typename T>
void Var<T>::backward() const {
  if (node_->value.numel() != 1)
    throw ShapeError("backward() without seed needs a scalar, got " +
                     shape_str(node_->value.shape()));
  backward(Tensor<T>(node_->value.shape(), T(1)));
}

template <typename T>
void Var<T>::backward(const Tensor<T>& seed) const {
  if (!node_->requires_grad) return;
  // Iterative post-order DFS to get a topological order.
  std::vector<Node<T>*> order;
  std::unordered_set<Node<T>*> seen;
  std::vector<std::pair<Node<T>*, std::size_t>> stack;
  stack.emplace_back(node_.get(), 0);
  seen.insert(node_.get());
  while (!stack.empty()) {
    auto& [n, idx] = stack.back();
    if (idx < n->inputs.size()) {
      Node<T>* child = n->inputs[idx++].get();
      if (child && child->requires_grad && !seen.count(child)) {
        seen.insert(child);
        stack.emplace_back(child, 0);
      }
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }
  node_->accumulate(seed);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<T>* n = *it;
    if (n->backward && n->grad.defined()) {
      n->backward(*n);
      // Interior gradients are not needed after propagation.
      n->grad = Tensor<T>();
    }
  }
}

template struct Node<float>;
template struct Node<double>;
template class Var<float>;
template class Var<double>;
template Var<float> make_result(Tensor<float>, std::vector<Var<float>>,
                                std::function<void(Node<float>&)>);
template Var<double> make_result(Tensor<double>, std::vector<Var<double>>,
                                 std::function<void(Node<double>&)>);

}  // namespace mtlface
