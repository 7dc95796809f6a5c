#pragma once

#include <cmath>
#include <string>

#include "gridclip/model.hpp"
#include "gridclip/targets.hpp"

namespace gridclip {

struct LossError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

namespace loss_detail {

template <typename S>
Tensor<S> to_scalar_tensor(const Tensor<double>& t) {
  return t.template cast<S>();
}

}  // namespace loss_detail

/// Unnormalized focal-loss sum over one score map: for probabilities
/// p = sigmoid(S), sums -alpha_t (1-p_t)^gamma log(p_t) over every cell and
/// category. log is clamped at 1e-12.
template <typename S>
ad::VarId focal_loss_sum(ad::Tape<S>& t, ad::VarId scores, const Tensor<double>& cls_target,
                         double alpha, double gamma) {
  using namespace ad;
  const Tensor<S> y = loss_detail::to_scalar_tensor<S>(cls_target);
  if (y.shape != t.val(scores).shape) throw LossError("focal: target shape mismatch");
  Tensor<S> one_minus_y(y.shape);
  Tensor<S> alpha_t(y.shape);
  for (std::size_t i = 0; i < y.numel(); ++i) {
    one_minus_y[i] = S(1) - y[i];
    alpha_t[i] = static_cast<S>(alpha) * y[i] + static_cast<S>(1.0 - alpha) * (S(1) - y[i]);
  }
  VarId p = sigmoid(t, scores);
  VarId pt = add(t, mul_const(t, p, y), mul_const(t, affine(t, p, S(-1), S(1)), std::move(one_minus_y)));
  VarId focal_w = pow_const(t, affine(t, pt, S(-1), S(1)), static_cast<S>(gamma));
  VarId nll = affine(t, log_clamped(t, pt, S(1e-12)), S(-1), S(0));
  VarId term = mul_const(t, mul(t, focal_w, nll), std::move(alpha_t));
  return sum(t, term);
}

/// Focal loss over all pyramid levels, normalized by max(pos_count, 1).
template <typename S>
ad::VarId focal_loss(ad::Tape<S>& t, const std::vector<ad::VarId>& level_scores,
                     const GridTargets& targets, double alpha, double gamma) {
  using namespace ad;
  if (level_scores.size() != targets.levels.size())
    throw LossError("focal: level count mismatch");
  VarId acc = kNoVar;
  for (std::size_t i = 0; i < level_scores.size(); ++i) {
    VarId s = focal_loss_sum(t, level_scores[i], targets.levels[i].cls, alpha, gamma);
    acc = acc == kNoVar ? s : add(t, acc, s);
  }
  const S norm = S(1) / static_cast<S>(std::max(targets.total_pos, 1));
  return affine(t, acc, norm, S(0));
}

namespace loss_detail {

/// Per-positive (1 - GIoU) terms for one level as a [1, P] row.
template <typename S>
ad::VarId giou_terms_level(ad::Tape<S>& t, ad::VarId deltas, const GridTargets::Level& lvl,
                           const LevelGeometry& geom) {
  using namespace ad;
  const int p = static_cast<int>(lvl.pos_cells.size());
  VarId dg = gather_cells(t, deltas, lvl.pos_cells);  // [4, P]
  VarId dl = slice_rows(t, dg, 0, 1);
  VarId dt = slice_rows(t, dg, 1, 2);
  VarId dr = slice_rows(t, dg, 2, 3);
  VarId db = slice_rows(t, dg, 3, 4);

  Tensor<S> pxs({1, p}), pys({1, p}), tx1({1, p}), ty1({1, p}), tx2({1, p}), ty2({1, p}),
      tarea({1, p});
  for (int i = 0; i < p; ++i) {
    const int cell = lvl.pos_cells[static_cast<std::size_t>(i)];
    const int cy = cell / geom.w, cx = cell % geom.w;
    const auto [px, py] = grid_point(geom, cx, cy);
    const double l = lvl.reg.at3(0, cy, cx), tt = lvl.reg.at3(1, cy, cx);
    const double r = lvl.reg.at3(2, cy, cx), bb = lvl.reg.at3(3, cy, cx);
    pxs.at2(0, i) = static_cast<S>(px);
    pys.at2(0, i) = static_cast<S>(py);
    tx1.at2(0, i) = static_cast<S>(px - l);
    ty1.at2(0, i) = static_cast<S>(py - tt);
    tx2.at2(0, i) = static_cast<S>(px + r);
    ty2.at2(0, i) = static_cast<S>(py + bb);
    tarea.at2(0, i) = static_cast<S>((l + r) * (tt + bb));
  }
  VarId pxc = t.constant(std::move(pxs));
  VarId pyc = t.constant(std::move(pys));
  VarId tx1c = t.constant(std::move(tx1));
  VarId ty1c = t.constant(std::move(ty1));
  VarId tx2c = t.constant(std::move(tx2));
  VarId ty2c = t.constant(std::move(ty2));
  VarId tareac = t.constant(std::move(tarea));

  VarId x1 = sub(t, pxc, dl);
  VarId y1 = sub(t, pyc, dt);
  VarId x2 = add(t, pxc, dr);
  VarId y2 = add(t, pyc, db);

  VarId iw = clamp_min(t, sub(t, min_ew(t, x2, tx2c), max_ew(t, x1, tx1c)), S(0));
  VarId ih = clamp_min(t, sub(t, min_ew(t, y2, ty2c), max_ew(t, y1, ty1c)), S(0));
  VarId inter = mul(t, iw, ih);
  VarId area_p = mul(t, add(t, dl, dr), add(t, dt, db));
  VarId uni = sub(t, add(t, area_p, tareac), inter);
  VarId ew = sub(t, max_ew(t, x2, tx2c), min_ew(t, x1, tx1c));
  VarId eh = sub(t, max_ew(t, y2, ty2c), min_ew(t, y1, ty1c));
  VarId ea = mul(t, ew, eh);
  VarId giou = sub(t, div(t, inter, uni), div(t, sub(t, ea, uni), ea));
  return affine(t, giou, S(-1), S(1));  // 1 - GIoU
}

}  // namespace loss_detail

/// Mean (1 - GIoU) over all positive locations; 0 when there are none. With
/// centerness weighting the terms are averaged with ctr-target weights.
template <typename S>
ad::VarId giou_loss(ad::Tape<S>& t, const std::vector<ad::VarId>& level_deltas,
                    const GridTargets& targets, const std::vector<LevelGeometry>& geometry,
                    bool centerness_weighted = false) {
  using namespace ad;
  if (targets.total_pos == 0) return t.constant(Tensor<S>({1}, {S(0)}));
  std::vector<VarId> rows;
  std::vector<S> weights;
  for (std::size_t i = 0; i < targets.levels.size(); ++i) {
    const auto& lvl = targets.levels[i];
    if (lvl.pos_cells.empty()) continue;
    rows.push_back(loss_detail::giou_terms_level(t, level_deltas[i], lvl, geometry[i]));
    for (int cell : lvl.pos_cells)
      weights.push_back(static_cast<S>(lvl.ctr[static_cast<std::size_t>(cell)]));
  }
  VarId all = rows.size() == 1 ? rows[0] : concat_cols(t, rows);
  if (!centerness_weighted) return mean(t, all);
  Tensor<S> w({1, static_cast<int>(weights.size())});
  S wsum = 0;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    w.at2(0, static_cast<int>(i)) = weights[i];
    wsum += weights[i];
  }
  if (wsum <= S(0)) return mean(t, all);
  return affine(t, sum(t, mul_const(t, all, std::move(w))), S(1) / wsum, S(0));
}

/// Mean binary cross-entropy between sigmoid(logits) and soft centerness
/// targets over positive locations; 0 when there are none.
template <typename S>
ad::VarId centerness_loss(ad::Tape<S>& t, const std::vector<ad::VarId>& level_ctr_logits,
                          const GridTargets& targets) {
  using namespace ad;
  if (targets.total_pos == 0) return t.constant(Tensor<S>({1}, {S(0)}));
  std::vector<VarId> rows;
  for (std::size_t i = 0; i < targets.levels.size(); ++i) {
    const auto& lvl = targets.levels[i];
    if (lvl.pos_cells.empty()) continue;
    VarId logits = gather_cells(t, level_ctr_logits[i], lvl.pos_cells);  // [1, P]
    const int p = static_cast<int>(lvl.pos_cells.size());
    Tensor<S> tgt({1, p}), one_minus_tgt({1, p});
    for (int j = 0; j < p; ++j) {
      const S c = static_cast<S>(lvl.ctr[static_cast<std::size_t>(lvl.pos_cells[static_cast<std::size_t>(j)])]);
      tgt.at2(0, j) = c;
      one_minus_tgt.at2(0, j) = S(1) - c;
    }
    VarId s = sigmoid(t, logits);
    VarId term = add(t, mul_const(t, log_clamped(t, s, S(1e-12)), std::move(tgt)),
                     mul_const(t, log_clamped(t, affine(t, s, S(-1), S(1)), S(1e-12)),
                               std::move(one_minus_tgt)));
    rows.push_back(affine(t, term, S(-1), S(0)));
  }
  VarId all = rows.size() == 1 ? rows[0] : concat_cols(t, rows);
  return mean(t, all);
}

/// Mean absolute difference between the aligned embedding and the frozen
/// teacher embedding (which enters as a constant: no gradient reaches the
/// teacher). Optionally both sides are L2-normalized first.
template <typename S>
ad::VarId image_align_loss(ad::Tape<S>& t, ad::VarId z_bar_prime,
                           const std::vector<double>& teacher_embedding, bool normalize = false) {
  using namespace ad;
  const int d = t.val(z_bar_prime).dim(0);
  if (d != static_cast<int>(teacher_embedding.size()))
    throw LossError("image alignment: dimension mismatch (" + std::to_string(d) + " vs " +
                    std::to_string(teacher_embedding.size()) + ")");
  std::vector<double> target = teacher_embedding;
  VarId pred = z_bar_prime;
  if (normalize) {
    double n2 = 0;
    for (double v : target) n2 += v * v;
    const double n = std::max(1e-8, std::sqrt(n2));
    for (auto& v : target) v /= n;
    VarId row = reshape(t, z_bar_prime, {1, d});
    VarId norm = clamp_min(t, sqrt_op(t, sum_rows(t, mul(t, row, row))), S(1e-8));
    pred = reshape(t, scale_rows(t, row, norm, true), {d});
  }
  Tensor<S> tgt({d});
  for (int i = 0; i < d; ++i) tgt[static_cast<std::size_t>(i)] = static_cast<S>(target[static_cast<std::size_t>(i)]);
  VarId diff = sub(t, pred, t.constant(std::move(tgt)));
  return mean(t, abs_op(t, diff));
}

/// Exact weighted combination L = w_grid*L_grid + w_image*L_image + L_R + L_C.
/// The value-level twin below uses the same expression so logged traces can
/// be re-derived bit-for-bit.
template <typename S>
ad::VarId total_loss(ad::Tape<S>& t, ad::VarId l_grid, ad::VarId l_image, ad::VarId l_reg,
                     ad::VarId l_ctr, double w_grid, double w_image) {
  using namespace ad;
  return add(t, add(t, affine(t, l_grid, static_cast<S>(w_grid), S(0)),
                    affine(t, l_image, static_cast<S>(w_image), S(0))),
             add(t, l_reg, l_ctr));
}

inline double combine_total_loss(double l_grid, double l_image, double l_reg, double l_ctr,
                                 double w_grid, double w_image) {
  const struct {
    const char* name;
    double v;
  } comps[] = {{"l_grid", l_grid}, {"l_image", l_image}, {"l_reg", l_reg}, {"l_ctr", l_ctr}};
  for (const auto& c : comps)
    if (!std::isfinite(c.v))
      throw LossError(std::string("non-finite loss component: ") + c.name);
  return w_grid * l_grid + w_image * l_image + l_reg + l_ctr;
}

/// All loss heads for one image.
template <typename S>
struct LossVars {
  ad::VarId l_grid, l_image, l_reg, l_ctr, total;
};

template <typename S>
LossVars<S> build_losses(ad::Tape<S>& t, const ForwardOut<S>& fwd, const GridTargets& targets,
                         const std::vector<LevelGeometry>& geometry,
                         const std::vector<double>& teacher_embedding,
                         const ExperimentConfig& cfg) {
  std::vector<ad::VarId> scores, deltas, ctrs;
  for (const auto& lvl : fwd.levels) {
    scores.push_back(lvl.scores);
    deltas.push_back(lvl.deltas);
    ctrs.push_back(lvl.ctr_logits);
  }
  LossVars<S> out;
  out.l_grid = focal_loss(t, scores, targets, cfg.focal_alpha, cfg.focal_gamma);
  out.l_image = image_align_loss(t, fwd.z_bar_prime, teacher_embedding, cfg.normalize_image_align);
  out.l_reg = giou_loss(t, deltas, targets, geometry, cfg.centerness_weighted_reg);
  out.l_ctr = centerness_loss(t, ctrs, targets);
  out.total = total_loss(t, out.l_grid, out.l_image, out.l_reg, out.l_ctr, cfg.w_grid, cfg.w_image);
  return out;
}

}  // namespace gridclip
