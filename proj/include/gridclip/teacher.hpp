#pragma once

#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "gridclip/rng.hpp"
#include "gridclip/synth_data.hpp"

namespace gridclip {

struct TeacherError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Frozen stand-in for the CLIP image encoder used as the distillation
/// teacher. Two backends:
///   Seeded - pooled color-prototype responses plus global image statistics
///            pushed through a fixed seeded linear readout, so the embedding
///            genuinely encodes which categories appear in the image;
///   File   - lookup of precomputed embeddings keyed by image id.
/// Parameters never receive gradients; they live outside every ParamStore.
class Teacher {
 public:
  static constexpr int kGlobalStats = 4;  // mean R, G, B and mean local std
  static constexpr int kFeatureDim = kNumColors + kGlobalStats;

  static Teacher seeded(std::uint64_t seed, int dim) {
    Teacher t;
    t.dim_ = dim;
    t.backend_ = Backend::Seeded;
    Rng rng(seed, "teacher-readout");
    t.readout_.resize(static_cast<std::size_t>(dim) * kFeatureDim);
    const double scale = 1.0 / std::sqrt(static_cast<double>(kFeatureDim));
    for (auto& v : t.readout_) v = rng.normal() * scale;
    return t;
  }

  static Teacher from_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw TeacherError("cannot open teacher table: " + path);
    nlohmann::json j = nlohmann::json::parse(in);
    Teacher t;
    t.backend_ = Backend::File;
    t.dim_ = j.at("dim").get<int>();
    for (const auto& [key, value] : j.at("embeddings").items()) {
      auto vec = value.get<std::vector<double>>();
      if (static_cast<int>(vec.size()) != t.dim_)
        throw TeacherError("teacher table row " + key + " has wrong dimension");
      t.table_[key] = std::move(vec);
    }
    return t;
  }

  void save_table(const std::string& path) const {
    nlohmann::json j;
    j["dim"] = dim_;
    auto& e = j["embeddings"] = nlohmann::json::object();
    for (const auto& [key, value] : table_) e[key] = value;
    std::ofstream out(path);
    if (!out) throw TeacherError("cannot write teacher table: " + path);
    out << j.dump() << "\n";
  }

  int dim() const { return dim_; }

  std::vector<double> embed(const AnnotatedImage& img) const {
    if (backend_ == Backend::File) {
      const auto it = table_.find(img.id);
      if (it == table_.end()) throw TeacherError("teacher table has no embedding for " + img.id);
      return it->second;
    }
    return project(features(img));
  }

  /// Teacher-space embedding of a category's ideal attribute response; used
  /// to rank categories against image embeddings (RC@k analysis).
  std::vector<double> category_embedding(const CategoryAttrs& attrs) const {
    if (backend_ != Backend::Seeded)
      throw TeacherError("category embeddings require the seeded backend");
    std::vector<double> phi(kFeatureDim, 0.0);
    phi[static_cast<std::size_t>(attrs.color)] = 1.0;
    auto v = project(phi);
    double n2 = 0;
    for (double x : v) n2 += x * x;
    const double n = std::sqrt(n2);
    if (n > 1e-12)
      for (auto& x : v) x /= n;
    return v;
  }

  std::uint64_t params_hash() const {
    std::uint64_t h = fnv1a64("teacher", static_cast<std::uint64_t>(dim_));
    h = fnv1a64(std::string_view(reinterpret_cast<const char*>(readout_.data()),
                                 readout_.size() * sizeof(double)),
                h);
    for (const auto& [key, value] : table_) {
      h = fnv1a64(key, h);
      h = fnv1a64(std::string_view(reinterpret_cast<const char*>(value.data()),
                                   value.size() * sizeof(double)),
                  h);
    }
    return h;
  }

  /// Pooled attribute features: per-color chromaticity responses weighted by
  /// saturation (texture darkening scales RGB, leaving chromaticity fixed,
  /// and the grey background carries almost no saturation) plus global
  /// pooled statistics.
  std::vector<double> features(const AnnotatedImage& img) const {
    const std::size_t plane = static_cast<std::size_t>(img.width) * img.height;
    std::vector<double> phi(kFeatureDim, 0.0);
    double proto_chroma[kNumColors][3];
    for (int c = 0; c < kNumColors; ++c) {
      const auto& col = kColors[c];
      const double s = col.r + col.g + col.b;
      proto_chroma[c][0] = col.r / s;
      proto_chroma[c][1] = col.g / s;
      proto_chroma[c][2] = col.b / s;
    }
    double mean_rgb[3] = {0, 0, 0};
    for (std::size_t p = 0; p < plane; ++p) {
      const double r = img.pixels[p];
      const double g = img.pixels[plane + p];
      const double b = img.pixels[2 * plane + p];
      mean_rgb[0] += r;
      mean_rgb[1] += g;
      mean_rgb[2] += b;
      const double s = r + g + b;
      if (s < 1e-6) continue;
      const double sat = std::max({r, g, b}) - std::min({r, g, b});
      if (sat < 0.08) continue;
      const double cr = r / s, cg = g / s, cb = b / s;
      for (int c = 0; c < kNumColors; ++c) {
        const double d = sq(cr - proto_chroma[c][0]) + sq(cg - proto_chroma[c][1]) +
                         sq(cb - proto_chroma[c][2]);
        phi[static_cast<std::size_t>(c)] += sat * std::exp(-d / 0.004);
      }
    }
    for (int c = 0; c < kNumColors; ++c) phi[static_cast<std::size_t>(c)] /= static_cast<double>(plane);
    for (int c = 0; c < 3; ++c)
      phi[static_cast<std::size_t>(kNumColors + c)] = 0.1 * mean_rgb[c] / static_cast<double>(plane);
    // mean local 3x3 standard deviation of luminance
    double tex = 0;
    for (int y = 1; y + 1 < img.height; ++y)
      for (int x = 1; x + 1 < img.width; ++x) {
        double s = 0, s2 = 0;
        for (int dy = -1; dy <= 1; ++dy)
          for (int dx = -1; dx <= 1; ++dx) {
            const std::size_t p = static_cast<std::size_t>(y + dy) * img.width + (x + dx);
            const double lum =
                (img.pixels[p] + img.pixels[plane + p] + img.pixels[2 * plane + p]) / 3.0;
            s += lum;
            s2 += lum * lum;
          }
        s /= 9.0;
        s2 = s2 / 9.0 - s * s;
        tex += std::sqrt(std::max(0.0, s2));
      }
    const double interior = static_cast<double>(std::max(1, (img.height - 2) * (img.width - 2)));
    phi[static_cast<std::size_t>(kNumColors + 3)] = 0.1 * tex / interior;
    return phi;
  }

 private:
  enum class Backend { Seeded, File };

  static double sq(double v) { return v * v; }

  std::vector<double> project(const std::vector<double>& phi) const {
    std::vector<double> out(static_cast<std::size_t>(dim_), 0.0);
    for (int d = 0; d < dim_; ++d) {
      double acc = 0;
      for (int f = 0; f < kFeatureDim; ++f)
        acc += readout_[static_cast<std::size_t>(d) * kFeatureDim + f] * phi[static_cast<std::size_t>(f)];
      out[static_cast<std::size_t>(d)] = acc;
    }
    return out;
  }

  Backend backend_ = Backend::Seeded;
  int dim_ = 0;
  std::vector<double> readout_;                          // [dim x kFeatureDim]
  std::map<std::string, std::vector<double>> table_;     // file backend
};

}  // namespace gridclip
