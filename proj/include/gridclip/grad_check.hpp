#pragma once

#include <functional>

#include "gridclip/params.hpp"
#include "gridclip/rng.hpp"

namespace gridclip {

struct GradCheckReport {
  double max_rel_err = 0.0;
  int probes = 0;
  int resampled = 0;
};

/// Central-difference verification of analytic gradients, run at float64.
///
/// value_fn evaluates the loss for the current parameter values; grad_fn
/// additionally returns the flat analytic gradient (store order). A random
/// subset of coordinates is probed; a probe whose error explodes (ReLU kink
/// or max tie straddled by the stencil) is resampled a bounded number of
/// times before its error is allowed to stand.
inline GradCheckReport grad_check(ParamStore<double>& params,
                                  const std::function<double()>& value_fn,
                                  const std::function<std::vector<double>()>& grad_fn,
                                  int n_probes, Rng& rng, double h = 1e-5,
                                  double resample_threshold = 1e-4, int max_resamples = 8) {
  const std::vector<double> analytic = grad_fn();
  const std::size_t total = params.total_scalars();
  if (analytic.size() != total) throw std::logic_error("grad_fn returned wrong gradient size");

  auto coord_ref = [&](std::size_t flat) -> double& {
    std::size_t off = flat;
    for (auto& e : params.entries()) {
      if (off < e.value.numel()) return e.value[off];
      off -= e.value.numel();
    }
    throw std::logic_error("flat index out of range");
  };

  GradCheckReport report;
  int resamples_left = max_resamples;
  for (int probe = 0; probe < n_probes; ++probe) {
    double err = 0.0;
    for (;;) {
      const std::size_t idx = static_cast<std::size_t>(rng.index(total));
      double& p = coord_ref(idx);
      const double saved = p;
      p = saved + h;
      const double fp = value_fn();
      p = saved - h;
      const double fm = value_fn();
      p = saved;
      const double numeric = (fp - fm) / (2.0 * h);
      err = std::abs(analytic[idx] - numeric) / std::max(1e-8, std::abs(numeric));
      if (err > resample_threshold && resamples_left > 0) {
        --resamples_left;
        ++report.resampled;
        continue;
      }
      break;
    }
    report.max_rel_err = std::max(report.max_rel_err, err);
    ++report.probes;
  }
  return report;
}

}  // namespace gridclip
