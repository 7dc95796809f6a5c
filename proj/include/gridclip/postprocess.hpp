#pragma once

#include <algorithm>
#include <fstream>
#include <vector>

#include <json.hpp>

#include "gridclip/config.hpp"
#include "gridclip/synth_data.hpp"

namespace gridclip {

struct Detection {
  Box box;
  double score = 0.0;
  int category = -1;  // bank index

  // deterministic tie ordering: score desc, then category, then spatial index
  int level = -1;
  int cell = -1;
};

struct DetectionSet {
  std::string image_id;
  std::vector<Detection> detections;  // score-sorted descending
};

/// box = (x - l, y - t, x + r, y + b), clamped to the image rectangle.
inline Box decode_box(double px, double py, double l, double t, double r, double b, int image_w,
                      int image_h) {
  Box out{px - l, py - t, px + r, py + b};
  out.x1 = std::clamp(out.x1, 0.0, static_cast<double>(image_w));
  out.y1 = std::clamp(out.y1, 0.0, static_cast<double>(image_h));
  out.x2 = std::clamp(out.x2, 0.0, static_cast<double>(image_w));
  out.y2 = std::clamp(out.y2, 0.0, static_cast<double>(image_h));
  return out;
}

inline double sigmoid(double x) {
  return x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
}

/// Final confidence per cell/category: sigmoid of the score, optionally
/// multiplied by the sigmoid of the centerness logit.
inline double candidate_score(double score, double ctr_logit, bool with_centerness) {
  const double p = sigmoid(score);
  return with_centerness ? p * sigmoid(ctr_logit) : p;
}

/// Intersection over union; 0 when the union is empty (zero-area boxes).
inline double iou(const Box& a, const Box& b) { return box_iou(a, b); }

namespace detail {

inline bool score_order(const Detection& a, const Detection& b) {
  if (a.score != b.score) return a.score > b.score;
  if (a.category != b.category) return a.category < b.category;
  if (a.level != b.level) return a.level < b.level;
  return a.cell < b.cell;
}

}  // namespace detail

/// Greedy per-class NMS: keep the highest-scored candidate, suppress the
/// rest above the IoU threshold, repeat. Input need not be sorted.
inline std::vector<Detection> nms_per_class(std::vector<Detection> candidates, double iou_threshold) {
  std::sort(candidates.begin(), candidates.end(), detail::score_order);
  std::vector<Detection> kept;
  std::vector<bool> suppressed(candidates.size(), false);
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    if (suppressed[i]) continue;
    kept.push_back(candidates[i]);
    for (std::size_t j = i + 1; j < candidates.size(); ++j)
      if (!suppressed[j] && iou(candidates[i].box, candidates[j].box) > iou_threshold)
        suppressed[j] = true;
  }
  return kept;
}

struct PostprocessSettings {
  double score_threshold = 0.05;
  double nms_iou = 0.5;
  int max_detections = 300;
  int pre_nms_topk = 1000;
  bool score_with_centerness = true;

  static PostprocessSettings from_config(const ExperimentConfig& c) {
    return {c.score_threshold, c.nms_iou, c.max_detections, c.pre_nms_topk,
            c.score_with_centerness};
  }
};

/// Pools per-level candidates, applies the score threshold and per-level
/// pre-NMS top-k, runs per-class NMS, and truncates to max_detections.
inline DetectionSet finalize(std::string image_id, std::vector<std::vector<Detection>> per_level,
                             const PostprocessSettings& s, int n_categories) {
  std::vector<Detection> pooled;
  for (auto& level : per_level) {
    auto it = std::remove_if(level.begin(), level.end(),
                             [&](const Detection& d) { return d.score < s.score_threshold; });
    level.erase(it, level.end());
    if (static_cast<int>(level.size()) > s.pre_nms_topk) {
      std::sort(level.begin(), level.end(), detail::score_order);
      level.resize(static_cast<std::size_t>(s.pre_nms_topk));
    }
    pooled.insert(pooled.end(), level.begin(), level.end());
  }

  std::vector<Detection> survivors;
  for (int k = 0; k < n_categories; ++k) {
    std::vector<Detection> cls;
    for (const auto& d : pooled)
      if (d.category == k) cls.push_back(d);
    auto kept = nms_per_class(std::move(cls), s.nms_iou);
    survivors.insert(survivors.end(), kept.begin(), kept.end());
  }
  std::sort(survivors.begin(), survivors.end(), detail::score_order);
  if (static_cast<int>(survivors.size()) > s.max_detections)
    survivors.resize(static_cast<std::size_t>(s.max_detections));
  return DetectionSet{std::move(image_id), std::move(survivors)};
}

// ---------------------------------------------------------------------------
// JSON-lines serialization: {image_id, boxes, scores, labels}
// ---------------------------------------------------------------------------

inline void write_detections_jsonl(const std::vector<DetectionSet>& sets,
                                   const std::vector<std::string>& category_names,
                                   const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write detections: " + path);
  for (const auto& ds : sets) {
    nlohmann::json rec;
    rec["image_id"] = ds.image_id;
    auto& boxes = rec["boxes"] = nlohmann::json::array();
    auto& scores = rec["scores"] = nlohmann::json::array();
    auto& labels = rec["labels"] = nlohmann::json::array();
    for (const auto& d : ds.detections) {
      boxes.push_back({d.box.x1, d.box.y1, d.box.x2, d.box.y2});
      scores.push_back(d.score);
      labels.push_back(category_names[static_cast<std::size_t>(d.category)]);
    }
    out << rec.dump() << "\n";
  }
}

}  // namespace gridclip
