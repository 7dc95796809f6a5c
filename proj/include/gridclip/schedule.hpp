#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <vector>

#include "gridclip/config.hpp"
#include "gridclip/tensor.hpp"

namespace gridclip {

/// Learning-rate multiplier as a function of the global iteration: linear
/// warmup from warmup_start_factor to 1 over warmup_iters, then a step decay
/// by lr_decay_factor at each decay-epoch boundary. Epoch boundaries are
/// derived by splitting total_iters evenly over config.epochs.
inline std::function<double(std::int64_t)> build_lr_schedule(const ExperimentConfig& config,
                                                             std::int64_t total_iters) {
  config.validate();
  if (total_iters < config.warmup_iters)
    throw ConfigError("total_iters must be >= warmup_iters");
  const std::int64_t iters_per_epoch =
      config.epochs > 0 ? std::max<std::int64_t>(1, total_iters / config.epochs) : 1;
  const double start = config.warmup_start_factor;
  const int warmup = config.warmup_iters;
  const auto decay_epochs = config.lr_decay_epochs;
  const double factor = config.lr_decay_factor;
  return [=](std::int64_t iter) -> double {
    if (warmup > 0 && iter < warmup) {
      const double a = static_cast<double>(iter) / static_cast<double>(warmup);
      return start + (1.0 - start) * a;
    }
    const std::int64_t epoch = iter / iters_per_epoch;
    double m = 1.0;
    for (int d : decay_epochs)
      if (epoch >= d) m *= factor;
    return m;
  };
}

/// Schedule multiplier when the current epoch is tracked externally (the
/// trainer's epochs may differ in length under repeat-factor sampling).
inline double lr_multiplier_at(const ExperimentConfig& config, std::int64_t iter, int epoch) {
  if (config.warmup_iters > 0 && iter < config.warmup_iters) {
    const double a = static_cast<double>(iter) / static_cast<double>(config.warmup_iters);
    return config.warmup_start_factor + (1.0 - config.warmup_start_factor) * a;
  }
  double m = 1.0;
  for (int d : config.lr_decay_epochs)
    if (epoch >= d) m *= config.lr_decay_factor;
  return m;
}

/// Scales the gradient vector to max_norm when its L2 norm exceeds it;
/// otherwise returns it unchanged. The zero vector passes through.
template <typename S>
std::vector<S> clip_gradients(std::vector<S> grads, S max_norm) {
  if (!(max_norm > S(0))) throw ConfigError("grad clip max_norm must be > 0");
  const S norm = l2_norm(grads);
  if (norm > max_norm) {
    const S scale = max_norm / norm;
    for (S& g : grads) g *= scale;
  }
  return grads;
}

}  // namespace gridclip
