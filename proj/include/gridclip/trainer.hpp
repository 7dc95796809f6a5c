#pragma once

#include <iostream>
#include <sstream>

#include "gridclip/augment.hpp"
#include "gridclip/eval.hpp"
#include "gridclip/losses.hpp"
#include "gridclip/optimizer.hpp"
#include "gridclip/sampler.hpp"
#include "gridclip/schedule.hpp"
#include "gridclip/teacher.hpp"

namespace gridclip {

struct TrainError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct TraceRow {
  std::int64_t iter = 0;
  double l_grid = 0, l_image = 0, l_reg = 0, l_ctr = 0, total = 0, lr = 0;
};

struct TrainResult {
  std::vector<TraceRow> trace;
  std::int64_t iterations = 0;
};

inline std::string trace_to_csv(const std::vector<TraceRow>& trace) {
  std::ostringstream os;
  os << "iter,l_grid,l_image,l_reg,l_ctr,total,lr\n";
  char buf[64];
  auto fmt = [&](double v) {
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return std::string(buf);
  };
  for (const auto& r : trace)
    os << r.iter << "," << fmt(r.l_grid) << "," << fmt(r.l_image) << "," << fmt(r.l_reg) << ","
       << fmt(r.l_ctr) << "," << fmt(r.total) << "," << fmt(r.lr) << "\n";
  return os.str();
}

inline std::vector<TraceRow> parse_trace_csv(const std::string& text) {
  std::istringstream is(text);
  std::string line;
  std::getline(is, line);
  if (line != "iter,l_grid,l_image,l_reg,l_ctr,total,lr")
    throw TrainError("unexpected loss trace header: " + line);
  std::vector<TraceRow> out;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    TraceRow r;
    std::replace(line.begin(), line.end(), ',', ' ');
    std::istringstream ls(line);
    ls >> r.iter >> r.l_grid >> r.l_image >> r.l_reg >> r.l_ctr >> r.total >> r.lr;
    out.push_back(r);
  }
  return out;
}

/// End-to-end training: repeat-factor sampling over epochs, per-image
/// augmentation, forward + Eq.-style loss combination, gradient clipping and
/// AdamW with the backbone learning-rate multiplier. Single-threaded and
/// bit-reproducible for a given seed. Supervision covers only categories
/// present in the bank; boxes of other categories are dropped (their images
/// still contribute the image-level alignment signal).
template <typename S>
TrainResult run_training(const ExperimentConfig& cfg, const Dataset& dataset,
                         const EmbeddingBank& bank, const Teacher& teacher,
                         GridClipModel<S>& model, int log_every = 0) {
  cfg.validate();
  if (dataset.images.empty()) throw TrainError("training dataset is empty");
  if (teacher.dim() != cfg.teacher_dim)
    throw TrainError("teacher dimension does not match the configuration");

  TrainResult result;
  if (cfg.epochs == 0) return result;

  // Supervision view: keep only boxes whose category is in the bank.
  Dataset train = dataset;
  for (auto& img : train.images) {
    std::vector<Box> boxes;
    std::vector<std::string> labels;
    for (std::size_t i = 0; i < img.boxes.size(); ++i)
      if (bank.index_of(img.labels[i]) >= 0) {
        boxes.push_back(img.boxes[i]);
        labels.push_back(img.labels[i]);
      }
    img.boxes = std::move(boxes);
    img.labels = std::move(labels);
  }

  const auto repeat = compute_repeat_factors(train, cfg.repeat_threshold);
  Rng root(cfg.seed, "training");
  AugmentPolicy policy = AugmentPolicy::from_config(cfg, /*normalize_pixels=*/false);
  const auto ranges = cfg.effective_scale_ranges();
  const auto geometry = pyramid_geometry(cfg.image_height, cfg.image_width);

  AdamW<S> optimizer(model.params().total_scalars());
  std::int64_t global_iter = 0;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    Rng epoch_rng = root.derive("epoch-" + std::to_string(epoch));
    const auto indices = sample_epoch_indices(repeat.image_factor, epoch_rng);

    for (std::size_t start = 0; start < indices.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t stop = std::min(indices.size(), start + static_cast<std::size_t>(cfg.batch_size));
      const int batch = static_cast<int>(stop - start);
      std::vector<S> flat_grads(model.params().total_scalars(), S(0));
      double sum_grid = 0, sum_image = 0, sum_reg = 0, sum_ctr = 0;

      for (std::size_t bi = start; bi < stop; ++bi) {
        const auto& source = train.images[static_cast<std::size_t>(indices[bi])];
        Rng aug_rng = epoch_rng.derive(static_cast<std::uint64_t>(bi) * 2654435761u + 17);
        AnnotatedImage img = apply_augmentation(source, aug_rng, policy);
        const auto teacher_emb = teacher.embed(img);

        ad::Tape<S> tape;
        auto ids = model.params().bind(tape);
        auto p = model.bind(ids);
        ad::VarId input = tape.leaf(model.to_input(img), false);
        auto fwd = model.forward(tape, p, input, bank);
        auto targets = assign_targets(img.boxes, img.labels, geometry, ranges, bank);
        auto losses = build_losses(tape, fwd, targets, geometry, teacher_emb, cfg);

        const double lg = static_cast<double>(tape.val(losses.l_grid)[0]);
        const double li = static_cast<double>(tape.val(losses.l_image)[0]);
        const double lr_ = static_cast<double>(tape.val(losses.l_reg)[0]);
        const double lc = static_cast<double>(tape.val(losses.l_ctr)[0]);
        try {
          combine_total_loss(lg, li, lr_, lc, cfg.w_grid, cfg.w_image);
        } catch (const LossError& e) {
          throw TrainError("aborting at iteration " + std::to_string(global_iter) + ": " +
                           e.what());
        }
        sum_grid += lg;
        sum_image += li;
        sum_reg += lr_;
        sum_ctr += lc;

        tape.backward(losses.total, S(1) / static_cast<S>(batch));
        std::size_t off = 0;
        for (std::size_t pi = 0; pi < ids.size(); ++pi) {
          const auto& g = tape.grad(ids[pi]);
          const std::size_t n = tape.val(ids[pi]).numel();
          if (!g.data.empty())
            for (std::size_t j = 0; j < n; ++j) flat_grads[off + j] += g.data[j];
          off += n;
        }
      }

      flat_grads = clip_gradients(std::move(flat_grads), static_cast<S>(cfg.grad_clip_norm));
      const double mult = lr_multiplier_at(cfg, global_iter, epoch);
      const double head_lr = cfg.base_lr * mult;
      optimizer.step(model.params(), flat_grads, static_cast<S>(cfg.weight_decay),
                     [&](ParamGroup g) {
                       return static_cast<S>(g == ParamGroup::Backbone
                                                 ? head_lr * cfg.backbone_lr_multiplier
                                                 : head_lr);
                     });

      TraceRow row;
      row.iter = global_iter;
      row.l_grid = sum_grid / batch;
      row.l_image = sum_image / batch;
      row.l_reg = sum_reg / batch;
      row.l_ctr = sum_ctr / batch;
      row.total = combine_total_loss(row.l_grid, row.l_image, row.l_reg, row.l_ctr, cfg.w_grid,
                                     cfg.w_image);
      row.lr = head_lr;
      result.trace.push_back(row);
      if (log_every > 0 && global_iter % log_every == 0)
        std::cerr << "iter " << global_iter << " epoch " << epoch << " total " << row.total
                  << " (grid " << row.l_grid << ", image " << row.l_image << ", reg " << row.l_reg
                  << ", ctr " << row.l_ctr << ") lr " << row.lr << "\n";
      ++global_iter;
    }
  }
  result.iterations = global_iter;
  return result;
}

}  // namespace gridclip
