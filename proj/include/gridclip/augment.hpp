#pragma once

#include <array>
#include <cmath>

#include "gridclip/config.hpp"
#include "gridclip/synth_data.hpp"

namespace gridclip {

struct AugmentPolicy {
  double flip_prob = 0.5;
  /// (long, short) target sizes; one entry = fixed scale, several = per-image
  /// multi-scale choice, empty = keep original size.
  std::vector<std::pair<int, int>> sizes;
  double crop_min_fraction = 0.0;  // 0 disables the random crop
  bool normalize = false;
  std::array<double, 3> mean = {0.5, 0.5, 0.5};
  std::array<double, 3> stddev = {0.25, 0.25, 0.25};

  static AugmentPolicy from_config(const ExperimentConfig& c, bool normalize_pixels) {
    AugmentPolicy p;
    p.flip_prob = c.flip_prob;
    p.sizes = c.resize_sizes;
    p.crop_min_fraction = c.crop_min_fraction;
    p.normalize = normalize_pixels;
    p.mean = c.pixel_mean;
    p.stddev = c.pixel_std;
    return p;
  }

  /// Identity policy used at inference: no flip, no crop, no resize.
  static AugmentPolicy none() {
    AugmentPolicy p;
    p.flip_prob = 0.0;
    return p;
  }
};

namespace detail {

inline AnnotatedImage flip_horizontal(const AnnotatedImage& img) {
  AnnotatedImage out = img;
  const std::size_t plane = static_cast<std::size_t>(img.width) * img.height;
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < img.height; ++y)
      for (int x = 0; x < img.width; ++x)
        out.pixels[static_cast<std::size_t>(c) * plane + static_cast<std::size_t>(y) * img.width + x] =
            img.pixels[static_cast<std::size_t>(c) * plane + static_cast<std::size_t>(y) * img.width +
                       (img.width - 1 - x)];
  for (auto& b : out.boxes) {
    const double x1 = static_cast<double>(img.width) - b.x2;
    const double x2 = static_cast<double>(img.width) - b.x1;
    b.x1 = x1;
    b.x2 = x2;
  }
  return out;
}

inline AnnotatedImage resize_bilinear(const AnnotatedImage& img, int out_w, int out_h) {
  AnnotatedImage out;
  out.id = img.id;
  out.width = out_w;
  out.height = out_h;
  out.labels = img.labels;
  const std::size_t in_plane = static_cast<std::size_t>(img.width) * img.height;
  const std::size_t out_plane = static_cast<std::size_t>(out_w) * out_h;
  out.pixels.assign(out_plane * 3, 0.f);
  const double sx = static_cast<double>(img.width) / out_w;
  const double sy = static_cast<double>(img.height) / out_h;
  for (int c = 0; c < 3; ++c) {
    const float* src = &img.pixels[static_cast<std::size_t>(c) * in_plane];
    float* dst = &out.pixels[static_cast<std::size_t>(c) * out_plane];
    for (int y = 0; y < out_h; ++y) {
      const double fy = (y + 0.5) * sy - 0.5;
      const int y0 = std::clamp(static_cast<int>(std::floor(fy)), 0, img.height - 1);
      const int y1 = std::min(y0 + 1, img.height - 1);
      const double wy = std::clamp(fy - y0, 0.0, 1.0);
      for (int x = 0; x < out_w; ++x) {
        const double fx = (x + 0.5) * sx - 0.5;
        const int x0 = std::clamp(static_cast<int>(std::floor(fx)), 0, img.width - 1);
        const int x1 = std::min(x0 + 1, img.width - 1);
        const double wx = std::clamp(fx - x0, 0.0, 1.0);
        const double v00 = src[static_cast<std::size_t>(y0) * img.width + x0];
        const double v01 = src[static_cast<std::size_t>(y0) * img.width + x1];
        const double v10 = src[static_cast<std::size_t>(y1) * img.width + x0];
        const double v11 = src[static_cast<std::size_t>(y1) * img.width + x1];
        dst[static_cast<std::size_t>(y) * out_w + x] = static_cast<float>(
            (1 - wy) * ((1 - wx) * v00 + wx * v01) + wy * ((1 - wx) * v10 + wx * v11));
      }
    }
  }
  const double bx = static_cast<double>(out_w) / img.width;
  const double by = static_cast<double>(out_h) / img.height;
  for (const Box& b : img.boxes)
    out.boxes.push_back(Box{b.x1 * bx, b.y1 * by, b.x2 * bx, b.y2 * by});
  return out;
}

}  // namespace detail

/// Flip -> aspect-preserving resize into the (long, short) constraint ->
/// random crop -> optional mean/std normalization. All randomness comes from
/// the supplied rng in a fixed draw order.
inline AnnotatedImage apply_augmentation(const AnnotatedImage& img, Rng& rng,
                                         const AugmentPolicy& policy) {
  AnnotatedImage out = rng.uniform() < policy.flip_prob ? detail::flip_horizontal(img) : img;

  if (!policy.sizes.empty()) {
    const auto [long_edge, short_edge] = policy.sizes[rng.index(policy.sizes.size())];
    if (long_edge <= 0 || short_edge <= 0) throw ConfigError("resize sizes must be positive");
    const double scale = std::min(static_cast<double>(long_edge) / std::max(out.width, out.height),
                                  static_cast<double>(short_edge) / std::min(out.width, out.height));
    const int ow = std::max(1, static_cast<int>(std::lround(out.width * scale)));
    const int oh = std::max(1, static_cast<int>(std::lround(out.height * scale)));
    if (ow != out.width || oh != out.height) out = detail::resize_bilinear(out, ow, oh);
  }

  if (policy.crop_min_fraction > 0.0) {
    const double f = policy.crop_min_fraction;
    const int cw = std::max(1, static_cast<int>(std::lround(out.width * rng.uniform(f, 1.0))));
    const int ch = std::max(1, static_cast<int>(std::lround(out.height * rng.uniform(f, 1.0))));
    const int x0 = static_cast<int>(rng.index(static_cast<std::uint64_t>(out.width - cw + 1)));
    const int y0 = static_cast<int>(rng.index(static_cast<std::uint64_t>(out.height - ch + 1)));
    AnnotatedImage cropped;
    cropped.id = out.id;
    cropped.width = cw;
    cropped.height = ch;
    const std::size_t in_plane = static_cast<std::size_t>(out.width) * out.height;
    const std::size_t out_plane = static_cast<std::size_t>(cw) * ch;
    cropped.pixels.assign(out_plane * 3, 0.f);
    for (int c = 0; c < 3; ++c)
      for (int y = 0; y < ch; ++y)
        for (int x = 0; x < cw; ++x)
          cropped.pixels[static_cast<std::size_t>(c) * out_plane + static_cast<std::size_t>(y) * cw + x] =
              out.pixels[static_cast<std::size_t>(c) * in_plane +
                         static_cast<std::size_t>(y0 + y) * out.width + (x0 + x)];
    for (std::size_t i = 0; i < out.boxes.size(); ++i) {
      Box b = out.boxes[i];
      b.x1 = std::clamp(b.x1 - x0, 0.0, static_cast<double>(cw));
      b.x2 = std::clamp(b.x2 - x0, 0.0, static_cast<double>(cw));
      b.y1 = std::clamp(b.y1 - y0, 0.0, static_cast<double>(ch));
      b.y2 = std::clamp(b.y2 - y0, 0.0, static_cast<double>(ch));
      if (b.area() > 0.0) {
        cropped.boxes.push_back(b);
        cropped.labels.push_back(out.labels[i]);
      }
    }
    out = std::move(cropped);
  }

  if (policy.normalize) {
    const std::size_t plane = static_cast<std::size_t>(out.width) * out.height;
    for (int c = 0; c < 3; ++c) {
      const float m = static_cast<float>(policy.mean[static_cast<std::size_t>(c)]);
      const float s = static_cast<float>(policy.stddev[static_cast<std::size_t>(c)]);
      float* p = &out.pixels[static_cast<std::size_t>(c) * plane];
      for (std::size_t i = 0; i < plane; ++i) p[i] = (p[i] - m) / s;
    }
  }
  return out;
}

}  // namespace gridclip
