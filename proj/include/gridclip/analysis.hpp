#pragma once

#include <cstdio>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "gridclip/synth_data.hpp"
#include "gridclip/text_bank.hpp"

namespace gridclip {

namespace analysis_detail {

/// Shortest exact decimal for a double (round-trips bitwise through parse).
inline std::string fmt_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  double back = std::strtod(buf, nullptr);
  if (back == v) {
    // try shorter representations for readability
    for (int prec = 1; prec < 17; ++prec) {
      char shorter[32];
      std::snprintf(shorter, sizeof(shorter), "%.*g", prec, v);
      if (std::strtod(shorter, nullptr) == v) return shorter;
    }
  }
  return buf;
}

}  // namespace analysis_detail

// ---------------------------------------------------------------------------
// RC@k: image-level recall of ground-truth categories
// ---------------------------------------------------------------------------

struct RcAtKResult {
  std::vector<int> k_values;
  std::vector<double> recall;  // aligned with k_values
  int images_used = 0;
  int images_skipped = 0;  // no ground-truth categories
};

/// Per image, ranks every bank category by cosine similarity against the
/// image embedding; recall at k is the fraction of the image's ground-truth
/// categories appearing in the top k, averaged over images that have any.
inline RcAtKResult rc_at_k(const std::vector<std::vector<double>>& image_embeddings,
                           const std::vector<std::vector<double>>& category_embeddings,
                           const std::vector<std::string>& category_names,
                           const std::vector<AnnotatedImage>& images,
                           const std::vector<int>& k_list = {10, 100, 300}) {
  if (image_embeddings.size() != images.size())
    throw std::invalid_argument("one embedding per image required");
  RcAtKResult out;
  out.k_values = k_list;
  out.recall.assign(k_list.size(), 0.0);
  const int kcat = static_cast<int>(category_embeddings.size());

  for (std::size_t i = 0; i < images.size(); ++i) {
    std::set<int> gt;
    for (const auto& label : images[i].labels) {
      for (int c = 0; c < kcat; ++c)
        if (category_names[static_cast<std::size_t>(c)] == label) gt.insert(c);
    }
    if (gt.empty()) {
      ++out.images_skipped;
      continue;
    }
    // rank categories by cosine (embeddings need not be normalized)
    std::vector<std::pair<double, int>> ranked;
    const auto& emb = image_embeddings[i];
    double en = 0;
    for (double v : emb) en += v * v;
    en = std::sqrt(std::max(en, 1e-30));
    for (int c = 0; c < kcat; ++c) {
      const auto& ce = category_embeddings[static_cast<std::size_t>(c)];
      double dot = 0, cn = 0;
      for (std::size_t d = 0; d < ce.size(); ++d) {
        dot += emb[d] * ce[d];
        cn += ce[d] * ce[d];
      }
      ranked.emplace_back(-dot / (en * std::sqrt(std::max(cn, 1e-30))), c);
    }
    std::sort(ranked.begin(), ranked.end());
    for (std::size_t ki = 0; ki < k_list.size(); ++ki) {
      const int k = std::min<int>(k_list[ki], kcat);
      int hit = 0;
      for (int r = 0; r < k; ++r)
        if (gt.count(ranked[static_cast<std::size_t>(r)].second)) ++hit;
      out.recall[ki] += static_cast<double>(hit) / static_cast<double>(gt.size());
    }
    ++out.images_used;
  }
  for (auto& r : out.recall) r /= std::max(1, out.images_used);
  return out;
}

// ---------------------------------------------------------------------------
// Category-count histogram
// ---------------------------------------------------------------------------

struct CategoryHistogram {
  std::vector<int> count;       // distinct categories per image
  std::vector<double> fraction;  // normalized over images
};

inline CategoryHistogram category_count_histogram(const std::vector<AnnotatedImage>& images) {
  std::map<int, int> hist;
  for (const auto& img : images) {
    std::set<std::string> distinct(img.labels.begin(), img.labels.end());
    ++hist[static_cast<int>(distinct.size())];
  }
  CategoryHistogram out;
  const double n = static_cast<double>(images.size());
  for (const auto& [k, c] : hist) {
    out.count.push_back(k);
    out.fraction.push_back(static_cast<double>(c) / n);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Smoothed per-category AP curve
// ---------------------------------------------------------------------------

struct ApCurve {
  std::vector<std::string> category;  // sorted by training frequency ascending
  std::vector<int> frequency;
  std::vector<double> ap;
  std::vector<double> smoothed;
};

/// Moving average with a symmetric window (default [-10, 10]), truncated at
/// the series edges.
inline std::vector<double> moving_average_curve(const std::vector<double>& series, int lo = -10,
                                                int hi = 10) {
  std::vector<double> out;
  const int n = static_cast<int>(series.size());
  for (int i = 0; i < n; ++i) {
    const int a = std::max(0, i + lo);
    const int b = std::min(n - 1, i + hi);
    double acc = 0;
    for (int j = a; j <= b; ++j) acc += series[static_cast<std::size_t>(j)];
    out.push_back(acc / static_cast<double>(b - a + 1));
  }
  return out;
}

/// Per-category AP sorted by training-split frequency ascending (ties by
/// name), with its smoothed series.
inline ApCurve ap_by_frequency_curve(const std::map<std::string, double>& per_category_ap,
                                     const CorpusManifest& manifest, int window_lo = -10,
                                     int window_hi = 10) {
  std::vector<std::pair<std::pair<int, std::string>, double>> rows;
  for (const auto& [name, ap] : per_category_ap) {
    const int k = manifest.category_index(name);
    if (k < 0) throw std::invalid_argument("unknown category in AP map: " + name);
    rows.push_back({{manifest.categories[static_cast<std::size_t>(k)].frequency, name}, ap});
  }
  std::sort(rows.begin(), rows.end());
  ApCurve out;
  for (const auto& [key, ap] : rows) {
    out.frequency.push_back(key.first);
    out.category.push_back(key.second);
    out.ap.push_back(ap);
  }
  out.smoothed = moving_average_curve(out.ap, window_lo, window_hi);
  return out;
}

// ---------------------------------------------------------------------------
// CSV emitters and parsers (bitwise round trip)
// ---------------------------------------------------------------------------

inline std::string emit_rc_csv(const RcAtKResult& rc) {
  std::ostringstream os;
  os << "k,recall\n";
  for (std::size_t i = 0; i < rc.k_values.size(); ++i)
    os << rc.k_values[i] << "," << analysis_detail::fmt_double(rc.recall[i]) << "\n";
  return os.str();
}

inline RcAtKResult parse_rc_csv(const std::string& text) {
  std::istringstream is(text);
  std::string line;
  std::getline(is, line);
  if (line != "k,recall") throw std::invalid_argument("bad rc_at_k csv header");
  RcAtKResult out;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    const auto comma = line.find(',');
    out.k_values.push_back(std::stoi(line.substr(0, comma)));
    out.recall.push_back(std::strtod(line.c_str() + comma + 1, nullptr));
  }
  return out;
}

inline std::string emit_histogram_csv(const CategoryHistogram& h) {
  std::ostringstream os;
  os << "num_categories,fraction\n";
  for (std::size_t i = 0; i < h.count.size(); ++i)
    os << h.count[i] << "," << analysis_detail::fmt_double(h.fraction[i]) << "\n";
  return os.str();
}

inline CategoryHistogram parse_histogram_csv(const std::string& text) {
  std::istringstream is(text);
  std::string line;
  std::getline(is, line);
  if (line != "num_categories,fraction") throw std::invalid_argument("bad histogram csv header");
  CategoryHistogram out;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    const auto comma = line.find(',');
    out.count.push_back(std::stoi(line.substr(0, comma)));
    out.fraction.push_back(std::strtod(line.c_str() + comma + 1, nullptr));
  }
  return out;
}

inline std::string emit_curve_csv(const ApCurve& c) {
  std::ostringstream os;
  os << "category,frequency,ap,ap_smoothed\n";
  for (std::size_t i = 0; i < c.category.size(); ++i)
    os << c.category[i] << "," << c.frequency[i] << "," << analysis_detail::fmt_double(c.ap[i])
       << "," << analysis_detail::fmt_double(c.smoothed[i]) << "\n";
  return os.str();
}

inline ApCurve parse_curve_csv(const std::string& text) {
  std::istringstream is(text);
  std::string line;
  std::getline(is, line);
  if (line != "category,frequency,ap,ap_smoothed")
    throw std::invalid_argument("bad curve csv header");
  ApCurve out;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::size_t start = 0;
    for (int i = 0; i < 3; ++i) {
      const auto comma = line.find(',', start);
      cells.push_back(line.substr(start, comma - start));
      start = comma + 1;
    }
    cells.push_back(line.substr(start));
    out.category.push_back(cells[0]);
    out.frequency.push_back(std::stoi(cells[1]));
    out.ap.push_back(std::strtod(cells[2].c_str(), nullptr));
    out.smoothed.push_back(std::strtod(cells[3].c_str(), nullptr));
  }
  return out;
}

}  // namespace gridclip
