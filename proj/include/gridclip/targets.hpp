#pragma once

#include <cstdint>
#include <vector>

#include "gridclip/synth_data.hpp"
#include "gridclip/tensor.hpp"
#include "gridclip/text_bank.hpp"

namespace gridclip {

struct TargetError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct LevelGeometry {
  int h = 0, w = 0, stride = 0;
};

/// Level geometry implied by an input size (strides 8..128, ceil division).
inline std::vector<LevelGeometry> pyramid_geometry(int image_h, int image_w) {
  std::vector<LevelGeometry> g;
  for (int stride : {8, 16, 32, 64, 128})
    g.push_back(LevelGeometry{(image_h + stride - 1) / stride, (image_w + stride - 1) / stride, stride});
  return g;
}

/// Grid cell (x, y) maps to image point (s/2 + x*s, s/2 + y*s).
inline std::pair<double, double> grid_point(const LevelGeometry& g, int x, int y) {
  return {0.5 * g.stride + x * g.stride, 0.5 * g.stride + y * g.stride};
}

/// Generalized IoU of two boxes: IoU - (enclosure - union) / enclosure.
/// Ranges over (-1, 1]; -1 is approached by distant disjoint boxes.
inline double giou(const Box& a, const Box& b) {
  const double iw = std::max(0.0, std::min(a.x2, b.x2) - std::max(a.x1, b.x1));
  const double ih = std::max(0.0, std::min(a.y2, b.y2) - std::max(a.y1, b.y1));
  const double inter = iw * ih;
  const double uni = a.area() + b.area() - inter;
  const double ew = std::max(a.x2, b.x2) - std::min(a.x1, b.x1);
  const double eh = std::max(a.y2, b.y2) - std::min(a.y1, b.y1);
  const double enc = ew * eh;
  if (uni <= 0.0 || enc <= 0.0) return 0.0;
  return inter / uni - (enc - uni) / enc;
}

/// FCOS-style assignment targets for one image. Targets are computed in
/// double; centerness follows sqrt((min(l,r)/max(l,r)) * (min(t,b)/max(t,b))).
struct GridTargets {
  struct Level {
    Tensor<double> cls;            // [K, H, W], one-hot or all-zero columns
    Tensor<double> reg;            // [4, H, W], (l, t, r, b) in pixels
    Tensor<double> ctr;            // [1, H, W], defined where pos_mask = 1
    std::vector<std::uint8_t> pos_mask;  // H*W
    std::vector<int> pos_cells;          // linear indices with pos_mask = 1
    std::vector<int> pos_box;            // matched box index per positive cell
  };
  std::vector<Level> levels;
  int total_pos = 0;
};

/// A location is positive for box b iff its point lies strictly inside b and
/// max(l,t,r,b) falls in the level's (low, high] range; overlaps resolve to
/// the minimum-area box, ties to the lower box index.
inline GridTargets assign_targets(const std::vector<Box>& boxes,
                                  const std::vector<std::string>& labels,
                                  const std::vector<LevelGeometry>& geometry,
                                  const std::vector<std::pair<double, double>>& scale_ranges,
                                  const EmbeddingBank& bank) {
  if (boxes.size() != labels.size()) throw TargetError("boxes and labels must align");
  if (geometry.size() != scale_ranges.size())
    throw TargetError("one scale range per pyramid level required");
  std::vector<int> cat_of_box;
  cat_of_box.reserve(labels.size());
  for (const auto& name : labels) {
    const int k = bank.index_of(name);
    if (k < 0) throw TargetError("label not present in the embedding bank: " + name);
    cat_of_box.push_back(k);
  }

  GridTargets out;
  const int kcat = bank.size();
  for (std::size_t li = 0; li < geometry.size(); ++li) {
    const auto& g = geometry[li];
    const auto [lo, hi] = scale_ranges[li];
    GridTargets::Level lvl;
    lvl.cls = Tensor<double>::zeros({kcat, g.h, g.w});
    lvl.reg = Tensor<double>::zeros({4, g.h, g.w});
    lvl.ctr = Tensor<double>::zeros({1, g.h, g.w});
    lvl.pos_mask.assign(static_cast<std::size_t>(g.h) * g.w, 0);
    for (int y = 0; y < g.h; ++y)
      for (int x = 0; x < g.w; ++x) {
        const auto [px, py] = grid_point(g, x, y);
        int best = -1;
        double best_area = 0;
        double best_ltrb[4] = {0, 0, 0, 0};
        for (std::size_t b = 0; b < boxes.size(); ++b) {
          const Box& bx = boxes[b];
          if (!(px > bx.x1 && px < bx.x2 && py > bx.y1 && py < bx.y2)) continue;
          const double l = px - bx.x1, tdist = py - bx.y1, r = bx.x2 - px, btm = bx.y2 - py;
          const double mx = std::max(std::max(l, r), std::max(tdist, btm));
          if (!(mx > lo && mx <= hi)) continue;
          const double area = bx.area();
          if (best < 0 || area < best_area) {
            best = static_cast<int>(b);
            best_area = area;
            best_ltrb[0] = l;
            best_ltrb[1] = tdist;
            best_ltrb[2] = r;
            best_ltrb[3] = btm;
          }
        }
        if (best < 0) continue;
        const int cell = y * g.w + x;
        lvl.pos_mask[static_cast<std::size_t>(cell)] = 1;
        lvl.pos_cells.push_back(cell);
        lvl.pos_box.push_back(best);
        lvl.cls.at3(cat_of_box[static_cast<std::size_t>(best)], y, x) = 1.0;
        for (int d = 0; d < 4; ++d) lvl.reg.at3(d, y, x) = best_ltrb[d];
        const double lr_min = std::min(best_ltrb[0], best_ltrb[2]);
        const double lr_max = std::max(best_ltrb[0], best_ltrb[2]);
        const double tb_min = std::min(best_ltrb[1], best_ltrb[3]);
        const double tb_max = std::max(best_ltrb[1], best_ltrb[3]);
        lvl.ctr.at3(0, y, x) = std::sqrt((lr_min / lr_max) * (tb_min / tb_max));
        ++out.total_pos;
      }
    out.levels.push_back(std::move(lvl));
  }
  return out;
}

}  // namespace gridclip
