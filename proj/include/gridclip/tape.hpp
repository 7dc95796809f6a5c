#pragma once

#include <functional>
#include <stdexcept>
#include <utility>
#include <vector>

#include "gridclip/tensor.hpp"

namespace gridclip::ad {

using VarId = std::int32_t;
inline constexpr VarId kNoVar = -1;

/// Reverse-mode autodiff tape. Every operation appends one node; backward
/// replays the nodes in reverse creation order, which is a valid topological
/// order by construction. Single-threaded; gradients accumulate in creation
/// order, so runs are bit-reproducible.
template <typename S>
class Tape {
 public:
  VarId leaf(Tensor<S> value, bool requires_grad = false) {
    return emit(std::move(value), requires_grad, nullptr);
  }

  VarId constant(Tensor<S> value) { return leaf(std::move(value), false); }

  VarId emit(Tensor<S> value, bool requires_grad, std::function<void(Tape&)> backprop) {
    nodes_.push_back(Node{std::move(value), Tensor<S>{}, std::move(backprop), requires_grad});
    return static_cast<VarId>(nodes_.size() - 1);
  }

  const Tensor<S>& val(VarId id) const { return nodes_[static_cast<std::size_t>(id)].value; }
  Tensor<S>& val(VarId id) { return nodes_[static_cast<std::size_t>(id)].value; }

  /// Gradient buffer, allocated (zeroed) on first access.
  Tensor<S>& grad(VarId id) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    if (n.grad.data.empty() && !n.value.data.empty()) n.grad = Tensor<S>::zeros(n.value.shape);
    return n.grad;
  }

  bool requires_grad(VarId id) const { return nodes_[static_cast<std::size_t>(id)].requires_grad; }

  /// Seeds d(root)/d(root) = seed and propagates to all leaves. root must be
  /// a scalar (1-element) variable.
  void backward(VarId root, S seed = S(1)) {
    if (val(root).numel() != 1) throw std::logic_error("backward root must be scalar");
    grad(root)[0] += seed;
    for (std::size_t i = static_cast<std::size_t>(root) + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (n.backprop && n.requires_grad && !n.grad.data.empty()) n.backprop(*this);
    }
  }

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor<S> value;
    Tensor<S> grad;
    std::function<void(Tape&)> backprop;
    bool requires_grad;
  };

  std::vector<Node> nodes_;
};

/// True if any of the listed inputs participates in differentiation.
template <typename S>
inline bool any_requires(const Tape<S>& t, std::initializer_list<VarId> ids) {
  for (VarId id : ids)
    if (id != kNoVar && t.requires_grad(id)) return true;
  return false;
}

}  // namespace gridclip::ad
