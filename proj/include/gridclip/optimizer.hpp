#pragma once

#include <cmath>

#include "gridclip/params.hpp"

namespace gridclip {

/// Adam with decoupled weight decay. The weight-decay term is applied
/// directly to the parameters (not through the moments), scaled by the same
/// group learning rate as the gradient step.
template <typename S>
class AdamW {
 public:
  AdamW(std::size_t n_scalars, S beta1 = S(0.9), S beta2 = S(0.999), S eps = S(1e-8))
      : m_(n_scalars, S(0)), v_(n_scalars, S(0)), beta1_(beta1), beta2_(beta2), eps_(eps) {}

  /// One update over the flattened parameter/gradient layout of the store.
  /// lr_of(group) supplies the per-group learning rate for this step.
  template <typename LrFn>
  void step(ParamStore<S>& params, const std::vector<S>& flat_grads, S weight_decay, LrFn lr_of) {
    ++t_;
    const S bc1 = S(1) - std::pow(beta1_, static_cast<S>(t_));
    const S bc2 = S(1) - std::pow(beta2_, static_cast<S>(t_));
    std::size_t off = 0;
    for (auto& e : params.entries()) {
      const S lr = lr_of(e.group);
      for (std::size_t i = 0; i < e.value.numel(); ++i, ++off) {
        const S g = flat_grads[off];
        m_[off] = beta1_ * m_[off] + (S(1) - beta1_) * g;
        v_[off] = beta2_ * v_[off] + (S(1) - beta2_) * g * g;
        const S mhat = m_[off] / bc1;
        const S vhat = v_[off] / bc2;
        e.value[i] -= lr * (mhat / (std::sqrt(vhat) + eps_) + weight_decay * e.value[i]);
      }
    }
  }

  std::int64_t steps_taken() const { return t_; }

 private:
  std::vector<S> m_, v_;
  S beta1_, beta2_, eps_;
  std::int64_t t_ = 0;
};

}  // namespace gridclip
