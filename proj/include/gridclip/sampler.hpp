#pragma once

#include <cmath>
#include <map>
#include <set>

#include "gridclip/synth_data.hpp"

namespace gridclip {

struct RepeatFactors {
  std::map<std::string, double> category_factor;  // r(c) = max(1, sqrt(t/f(c)))
  std::vector<double> image_factor;               // aligned with dataset image order
  std::vector<std::string> excluded_categories;   // zero train-split frequency
};

/// LVIS-convention repeat factors over the (possibly filtered) dataset.
/// f(c) is the fraction of images containing category c.
inline RepeatFactors compute_repeat_factors(const Dataset& ds, double threshold) {
  if (!(threshold > 0.0 && threshold < 1.0))
    throw ConfigError("repeat threshold must lie in (0,1)");
  const double n = static_cast<double>(ds.images.size());
  std::map<std::string, int> count;
  for (const auto& img : ds.images) {
    std::set<std::string> distinct(img.labels.begin(), img.labels.end());
    for (const auto& name : distinct) ++count[name];
  }
  RepeatFactors rf;
  for (const auto& cat : ds.manifest.categories) {
    const auto it = count.find(cat.name);
    if (it == count.end() || it->second == 0) {
      rf.excluded_categories.push_back(cat.name);
      continue;
    }
    const double f = static_cast<double>(it->second) / n;
    rf.category_factor[cat.name] = std::max(1.0, std::sqrt(threshold / f));
  }
  rf.image_factor.reserve(ds.images.size());
  for (const auto& img : ds.images) {
    double r = 1.0;
    for (const auto& label : img.labels) {
      const auto it = rf.category_factor.find(label);
      if (it != rf.category_factor.end()) r = std::max(r, it->second);
    }
    rf.image_factor.push_back(r);
  }
  return rf;
}

/// Stochastic-rounding epoch: image i appears floor(r_i) times plus one more
/// with probability frac(r_i); the result is shuffled.
inline std::vector<int> sample_epoch_indices(const std::vector<double>& factors, Rng& rng) {
  std::vector<int> indices;
  for (std::size_t i = 0; i < factors.size(); ++i) {
    const double r = factors[i];
    if (r < 1.0) throw ConfigError("repeat factors must be >= 1");
    const int whole = static_cast<int>(std::floor(r));
    int copies = whole + (rng.uniform() < (r - whole) ? 1 : 0);
    for (int c = 0; c < copies; ++c) indices.push_back(static_cast<int>(i));
  }
  rng.shuffle(indices);
  return indices;
}

}  // namespace gridclip
