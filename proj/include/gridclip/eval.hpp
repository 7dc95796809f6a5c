#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "gridclip/model.hpp"
#include "gridclip/postprocess.hpp"
#include "gridclip/targets.hpp"
#include "gridclip/teacher.hpp"

namespace gridclip {

struct EvalError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Average precision
// ---------------------------------------------------------------------------

/// One scored detection of a single category, grouped per image.
struct ScoredBox {
  int image = 0;
  double score = 0.0;
  Box box;
};

/// AP for one category at one IoU threshold. Detections are greedily matched
/// in descending score order to the highest-IoU unmatched ground truth above
/// the threshold (IoU ties to the lower GT index); the precision envelope is
/// integrated over all recall breakpoints.
inline double average_precision(std::vector<ScoredBox> dets,
                                const std::vector<std::vector<Box>>& gt_per_image,
                                double iou_threshold) {
  int n_gt = 0;
  for (const auto& g : gt_per_image) n_gt += static_cast<int>(g.size());
  if (n_gt == 0) return 0.0;
  std::stable_sort(dets.begin(), dets.end(),
                   [](const ScoredBox& a, const ScoredBox& b) { return a.score > b.score; });
  std::vector<std::vector<bool>> used(gt_per_image.size());
  for (std::size_t i = 0; i < gt_per_image.size(); ++i)
    used[i].assign(gt_per_image[i].size(), false);

  std::vector<bool> tp_flags;
  tp_flags.reserve(dets.size());
  for (const auto& d : dets) {
    const auto& gts = gt_per_image[static_cast<std::size_t>(d.image)];
    int best = -1;
    double best_iou = iou_threshold;
    for (std::size_t g = 0; g < gts.size(); ++g) {
      if (used[static_cast<std::size_t>(d.image)][g]) continue;
      const double v = iou(d.box, gts[g]);
      if (v >= iou_threshold && v > best_iou) {
        best = static_cast<int>(g);
        best_iou = v;
      } else if (best < 0 && v >= iou_threshold && v == best_iou) {
        best = static_cast<int>(g);  // first (lowest-index) GT on exact tie
      }
    }
    if (best >= 0) {
      used[static_cast<std::size_t>(d.image)][static_cast<std::size_t>(best)] = true;
      tp_flags.push_back(true);
    } else {
      tp_flags.push_back(false);
    }
  }

  // precision-recall points, then the monotone envelope from the right
  std::vector<double> recall, precision;
  int tp = 0, fp = 0;
  for (bool flag : tp_flags) {
    flag ? ++tp : ++fp;
    recall.push_back(static_cast<double>(tp) / n_gt);
    precision.push_back(static_cast<double>(tp) / (tp + fp));
  }
  for (int i = static_cast<int>(precision.size()) - 2; i >= 0; --i)
    precision[static_cast<std::size_t>(i)] =
        std::max(precision[static_cast<std::size_t>(i)], precision[static_cast<std::size_t>(i) + 1]);
  double ap = 0.0, prev_r = 0.0;
  for (std::size_t i = 0; i < recall.size(); ++i) {
    ap += (recall[i] - prev_r) * precision[i];
    prev_r = recall[i];
  }
  return ap;
}

inline std::vector<double> default_iou_thresholds() {
  std::vector<double> t;
  for (int i = 0; i < 10; ++i) t.push_back(0.5 + 0.05 * i);
  return t;
}

struct CategoryApResult {
  std::map<std::string, double> ap;            // averaged over thresholds
  std::map<std::string, double> ap50, ap75;    // single-threshold values
  std::vector<std::string> excluded;           // categories with no GT
};

/// Per-category AP over a detection/GT corpus. Categories absent from the
/// ground truth are excluded from averages and reported.
inline CategoryApResult compute_ap(const std::vector<DetectionSet>& detections,
                                   const std::vector<AnnotatedImage>& ground_truth,
                                   const std::vector<std::string>& category_names,
                                   const std::vector<double>& iou_thresholds = default_iou_thresholds()) {
  if (detections.size() != ground_truth.size())
    throw EvalError("detections and ground truth must cover the same images");
  CategoryApResult out;
  for (std::size_t k = 0; k < category_names.size(); ++k) {
    const auto& name = category_names[k];
    std::vector<std::vector<Box>> gt(ground_truth.size());
    int n_gt = 0;
    for (std::size_t i = 0; i < ground_truth.size(); ++i)
      for (std::size_t b = 0; b < ground_truth[i].boxes.size(); ++b)
        if (ground_truth[i].labels[b] == name) {
          gt[i].push_back(ground_truth[i].boxes[b]);
          ++n_gt;
        }
    if (n_gt == 0) {
      out.excluded.push_back(name);
      continue;
    }
    std::vector<ScoredBox> dets;
    for (std::size_t i = 0; i < detections.size(); ++i)
      for (const auto& d : detections[i].detections)
        if (d.category == static_cast<int>(k))
          dets.push_back(ScoredBox{static_cast<int>(i), d.score, d.box});
    double acc = 0.0;
    for (double thr : iou_thresholds) acc += average_precision(dets, gt, thr);
    out.ap[name] = acc / static_cast<double>(iou_thresholds.size());
    out.ap50[name] = average_precision(dets, gt, 0.50);
    out.ap75[name] = average_precision(dets, gt, 0.75);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Bucket aggregation and the report
// ---------------------------------------------------------------------------

struct BucketAps {
  std::optional<double> ap_r, ap_c, ap_f, ap;
};

/// Mean per-category AP within each frequency bucket; empty buckets are
/// reported absent rather than zero.
inline BucketAps bucket_ap(const std::map<std::string, double>& per_category,
                           const CorpusManifest& manifest) {
  double sums[3] = {0, 0, 0};
  int counts[3] = {0, 0, 0};
  double total = 0;
  int n = 0;
  for (const auto& [name, ap] : per_category) {
    const int k = manifest.category_index(name);
    if (k < 0) throw EvalError("per-category AP references unknown category " + name);
    const int b = static_cast<int>(manifest.categories[static_cast<std::size_t>(k)].bucket);
    sums[b] += ap;
    ++counts[b];
    total += ap;
    ++n;
  }
  BucketAps out;
  if (counts[static_cast<int>(Bucket::Rare)])
    out.ap_r = sums[static_cast<int>(Bucket::Rare)] / counts[static_cast<int>(Bucket::Rare)];
  if (counts[static_cast<int>(Bucket::Common)])
    out.ap_c = sums[static_cast<int>(Bucket::Common)] / counts[static_cast<int>(Bucket::Common)];
  if (counts[static_cast<int>(Bucket::Frequent)])
    out.ap_f = sums[static_cast<int>(Bucket::Frequent)] / counts[static_cast<int>(Bucket::Frequent)];
  if (n) out.ap = total / n;
  return out;
}

struct EvalReport {
  std::string mode;  // closed | open | transfer
  std::map<std::string, double> per_category_ap;
  std::map<std::string, double> per_category_ap50;
  std::vector<std::string> excluded_categories;
  std::optional<double> ap, ap_r, ap_c, ap_f, ap50, ap75;
  std::optional<double> base_ap, novel_ap, base_ap50, novel_ap50;
  std::uint64_t bank_hash = 0;
  double nms_iou = 0.5;
  double score_threshold = 0.05;
  int max_detections = 300;

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["mode"] = mode;
    auto opt = [](const std::optional<double>& v) {
      return v ? nlohmann::json(*v) : nlohmann::json(nullptr);
    };
    j["ap"] = opt(ap);
    j["ap_r"] = opt(ap_r);
    j["ap_c"] = opt(ap_c);
    j["ap_f"] = opt(ap_f);
    j["ap50"] = opt(ap50);
    j["ap75"] = opt(ap75);
    j["base_ap"] = opt(base_ap);
    j["novel_ap"] = opt(novel_ap);
    j["base_ap50"] = opt(base_ap50);
    j["novel_ap50"] = opt(novel_ap50);
    j["per_category_ap"] = per_category_ap;
    j["per_category_ap50"] = per_category_ap50;
    j["excluded_categories"] = excluded_categories;
    j["settings"] = {{"bank_hash", bank_hash},
                     {"nms_iou", nms_iou},
                     {"score_threshold", score_threshold},
                     {"max_detections", max_detections}};
    return j;
  }
};

// ---------------------------------------------------------------------------
// Inference pipeline
// ---------------------------------------------------------------------------

/// Runs the detector over one prepared input and post-processes into final
/// detections.
template <typename S>
DetectionSet detect_image(const GridClipModel<S>& model, const EmbeddingBank& bank,
                          const AnnotatedImage& img, const PostprocessSettings& settings) {
  ad::Tape<S> tape;
  auto ids = model.params().bind(tape);
  auto p = model.bind(ids);
  ad::VarId input = tape.leaf(model.to_input(img), false);
  auto fwd = model.forward(tape, p, input, bank);

  const int img_w = model.config().image_width;
  const int img_h = model.config().image_height;
  std::vector<std::vector<Detection>> per_level;
  for (std::size_t li = 0; li < fwd.levels.size(); ++li) {
    const auto& lvl = fwd.levels[li];
    const auto& scores = tape.val(lvl.scores);
    const auto& deltas = tape.val(lvl.deltas);
    const auto& ctr = tape.val(lvl.ctr_logits);
    const int kcat = scores.dim(0);
    std::vector<Detection> cands;
    LevelGeometry geom{lvl.h, lvl.w, lvl.stride};
    for (int y = 0; y < lvl.h; ++y)
      for (int x = 0; x < lvl.w; ++x) {
        const auto [px, py] = grid_point(geom, x, y);
        const double ctr_logit = static_cast<double>(ctr.at3(0, y, x));
        for (int k = 0; k < kcat; ++k) {
          const double s = candidate_score(static_cast<double>(scores.at3(k, y, x)), ctr_logit,
                                           settings.score_with_centerness);
          if (s < settings.score_threshold) continue;
          Detection d;
          d.box = decode_box(px, py, deltas.at3(0, y, x), deltas.at3(1, y, x), deltas.at3(2, y, x),
                             deltas.at3(3, y, x), img_w, img_h);
          d.score = s;
          d.category = k;
          d.level = static_cast<int>(li);
          d.cell = y * lvl.w + x;
          cands.push_back(d);
        }
      }
    per_level.push_back(std::move(cands));
  }
  return finalize(img.id, std::move(per_level), settings, bank.size());
}

template <typename S>
std::vector<DetectionSet> run_inference(const GridClipModel<S>& model, const EmbeddingBank& bank,
                                        const std::vector<AnnotatedImage>& images,
                                        const PostprocessSettings& settings) {
  std::vector<DetectionSet> out;
  out.reserve(images.size());
  for (const auto& img : images) out.push_back(detect_image(model, bank, img, settings));
  return out;
}

namespace eval_detail {

inline void fill_aggregates(EvalReport& r, const CorpusManifest& manifest) {
  BucketAps buckets = bucket_ap(r.per_category_ap, manifest);
  r.ap = buckets.ap;
  r.ap_r = buckets.ap_r;
  r.ap_c = buckets.ap_c;
  r.ap_f = buckets.ap_f;

  double sums[2] = {0, 0}, sums50[2] = {0, 0};
  int counts[2] = {0, 0};
  for (const auto& [name, ap] : r.per_category_ap) {
    const int k = manifest.category_index(name);
    const int s = manifest.categories[static_cast<std::size_t>(k)].split == Split::Base ? 0 : 1;
    sums[s] += ap;
    sums50[s] += r.per_category_ap50.at(name);
    ++counts[s];
  }
  if (counts[0]) {
    r.base_ap = sums[0] / counts[0];
    r.base_ap50 = sums50[0] / counts[0];
  }
  if (counts[1]) {
    r.novel_ap = sums[1] / counts[1];
    r.novel_ap50 = sums50[1] / counts[1];
  }
}

}  // namespace eval_detail

/// Closed-set evaluation of the model against a bank over a dataset.
template <typename S>
EvalReport evaluate(const GridClipModel<S>& model, const EmbeddingBank& bank, const Dataset& ds,
                    PostprocessSettings settings, const std::string& mode = "closed") {
  auto detections = run_inference(model, bank, ds.images, settings);
  auto ap = compute_ap(detections, ds.images, bank.names);
  EvalReport report;
  report.mode = mode;
  if (!ap.ap50.empty()) {
    double s50 = 0, s75 = 0;
    for (const auto& [name, v] : ap.ap50) s50 += v;
    for (const auto& [name, v] : ap.ap75) s75 += v;
    report.ap50 = s50 / static_cast<double>(ap.ap50.size());
    report.ap75 = s75 / static_cast<double>(ap.ap75.size());
  }
  report.per_category_ap = std::move(ap.ap);
  report.per_category_ap50 = std::move(ap.ap50);
  report.excluded_categories = std::move(ap.excluded);
  eval_detail::fill_aggregates(report, ds.manifest);
  report.bank_hash = bank.content_hash();
  report.nms_iou = settings.nms_iou;
  report.score_threshold = settings.score_threshold;
  report.max_detections = settings.max_detections;
  return report;
}

/// Open-set protocol: the bank trained on base categories is extended with
/// novel names (attribute-informed embeddings from the manifest) and the
/// report separates base and novel aggregates.
template <typename S>
EvalReport open_set_eval(const GridClipModel<S>& model, const EmbeddingBank& base_bank,
                         const std::vector<std::string>& novel_names, const Dataset& ds,
                         PostprocessSettings settings, std::uint64_t embed_seed,
                         TextMode mode, const std::vector<std::string>& templates) {
  std::vector<std::pair<std::string, std::vector<double>>> novel;
  for (const auto& name : novel_names) {
    const int k = ds.manifest.category_index(name);
    if (k < 0) throw EvalError("novel category not in manifest: " + name);
    const auto& attrs = ds.manifest.categories[static_cast<std::size_t>(k)].attrs;
    novel.emplace_back(name,
                       synth_category_embed(name, embed_seed, base_bank.dim, mode, templates, &attrs));
  }
  auto bank = extend_bank_open_set(base_bank, novel);
  return evaluate(model, bank, ds, settings, "open");
}

/// Transfer protocol: the bank is replaced wholesale and NMS runs at the
/// transfer threshold (0.6 unless overridden).
template <typename S>
EvalReport transfer_eval(const GridClipModel<S>& model, const EmbeddingBank& replacement_bank,
                         const Dataset& ds, PostprocessSettings settings, double nms_iou = 0.6) {
  settings.nms_iou = nms_iou;
  return evaluate(model, replacement_bank, ds, settings, "transfer");
}

}  // namespace gridclip
