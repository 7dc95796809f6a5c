#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "gridclip/image_io.hpp"
#include "gridclip/rng.hpp"

namespace gridclip {

struct GenerationError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Corner-convention box (x1,y1,x2,y2), half-open in pixels.
struct Box {
  double x1 = 0, y1 = 0, x2 = 0, y2 = 0;
  double width() const { return x2 - x1; }
  double height() const { return y2 - y1; }
  double area() const { return std::max(0.0, width()) * std::max(0.0, height()); }
  bool valid() const { return x1 < x2 && y1 < y2; }
};

inline double box_iou(const Box& a, const Box& b) {
  const double ix = std::max(0.0, std::min(a.x2, b.x2) - std::max(a.x1, b.x1));
  const double iy = std::max(0.0, std::min(a.y2, b.y2) - std::max(a.y1, b.y1));
  const double inter = ix * iy;
  const double uni = a.area() + b.area() - inter;
  return uni > 0.0 ? inter / uni : 0.0;
}

enum class Bucket { Rare, Common, Frequent };
enum class Split { Base, Novel };

/// LVIS-style frequency buckets: 1-10 rare, 11-100 common, >100 frequent.
inline Bucket bucket_for(int image_frequency) {
  if (image_frequency <= 0) throw GenerationError("bucket undefined for zero frequency");
  if (image_frequency <= 10) return Bucket::Rare;
  if (image_frequency <= 100) return Bucket::Common;
  return Bucket::Frequent;
}

inline const char* to_string(Bucket b) {
  switch (b) {
    case Bucket::Rare: return "rare";
    case Bucket::Common: return "common";
    default: return "frequent";
  }
}
inline const char* to_string(Split s) { return s == Split::Base ? "base" : "novel"; }

// Renderable attribute tables shared by the generator, the frozen teacher
// and the attribute-informed text embeddings.
struct ColorDef {
  const char* name;
  float r, g, b;
};
inline constexpr ColorDef kColors[] = {
    {"red", 0.85f, 0.10f, 0.10f},    {"green", 0.10f, 0.75f, 0.12f},
    {"blue", 0.12f, 0.25f, 0.90f},   {"yellow", 0.92f, 0.85f, 0.10f},
    {"magenta", 0.85f, 0.12f, 0.80f}, {"cyan", 0.10f, 0.80f, 0.85f},
    {"orange", 0.95f, 0.55f, 0.08f}, {"purple", 0.50f, 0.15f, 0.80f},
    {"teal", 0.08f, 0.50f, 0.48f},   {"pink", 0.95f, 0.60f, 0.70f},
    {"lime", 0.60f, 0.90f, 0.15f},   {"brown", 0.55f, 0.35f, 0.12f},
    {"navy", 0.08f, 0.10f, 0.50f},   {"olive", 0.50f, 0.50f, 0.10f},
    {"maroon", 0.55f, 0.08f, 0.20f}, {"coral", 0.95f, 0.45f, 0.40f}};
inline constexpr const char* kShapes[] = {"circle", "square", "triangle", "diamond"};
inline constexpr const char* kTextures[] = {"solid", "striped", "dotted", "checker"};
inline constexpr int kNumColors = static_cast<int>(std::size(kColors));
inline constexpr int kNumShapes = static_cast<int>(std::size(kShapes));
inline constexpr int kNumTextures = static_cast<int>(std::size(kTextures));

struct CategoryAttrs {
  int shape = 0, color = 0, texture = 0;
};

struct CategoryInfo {
  std::string name;
  int frequency = 0;  // number of images containing the category
  Bucket bucket = Bucket::Common;
  Split split = Split::Base;
  CategoryAttrs attrs;
};

struct CorpusManifest {
  std::uint64_t seed = 0;
  int n_images = 0;
  int image_size = 128;
  std::vector<CategoryInfo> categories;

  int category_index(const std::string& name) const {
    for (std::size_t i = 0; i < categories.size(); ++i)
      if (categories[i].name == name) return static_cast<int>(i);
    return -1;
  }
  std::vector<std::string> names_with_split(Split s) const {
    std::vector<std::string> out;
    for (const auto& c : categories)
      if (c.split == s) out.push_back(c.name);
    return out;
  }
};

struct AnnotatedImage {
  std::string id;
  int width = 0, height = 0;
  std::vector<float> pixels;  // channel-planar RGB in [0,1]
  std::vector<Box> boxes;
  std::vector<std::string> labels;
};

struct Dataset {
  CorpusManifest manifest;
  std::vector<AnnotatedImage> images;
};

// ---------------------------------------------------------------------------
// Frequency plan
// ---------------------------------------------------------------------------

namespace detail {

/// Plans per-category image frequencies with a Zipf(k^-a) head. Every image
/// must contain at least one category, which forces sum(f) >= n_images; at
/// small category counts that coverage bound can push the proportional tail
/// above the rare band, in which case the trailing quarter of the categories
/// is folded into the rare band (1-10) and the head is rescaled.
inline std::vector<int> plan_frequencies(int n_categories, int n_images, double zipf_exponent) {
  const int k = n_categories;
  std::vector<double> w(static_cast<std::size_t>(k));
  for (int i = 0; i < k; ++i) w[static_cast<std::size_t>(i)] = std::pow(static_cast<double>(i + 1), -zipf_exponent);

  auto scaled = [&](double a, int from, int to) {
    std::vector<int> f;
    for (int i = from; i < to; ++i)
      f.push_back(std::max(1, static_cast<int>(std::llround(a * w[static_cast<std::size_t>(i)]))));
    return f;
  };
  const double wsum = std::accumulate(w.begin(), w.end(), 0.0);
  std::vector<int> freq = scaled(static_cast<double>(n_images) / wsum, 0, k);

  auto total = [&] { return std::accumulate(freq.begin(), freq.end(), 0); };
  auto has_bucket = [&](Bucket b) {
    return std::any_of(freq.begin(), freq.end(), [&](int f) { return bucket_for(f) == b; });
  };

  if (!has_bucket(Bucket::Frequent))
    throw GenerationError(
        "frequency plan cannot realize a frequent (>100 images) category; "
        "increase n_images or the zipf exponent");

  if (!has_bucket(Bucket::Rare)) {
    // Fold the tail into the rare band, preserving the power-law shape
    // within it, and rescale the head to keep coverage.
    const int tail = std::max(1, k / 4);
    const int head = k - tail;
    int tail_sum = 0;
    for (int i = 0; i < tail; ++i) {
      const int f = std::max(1, std::min(10, static_cast<int>(std::llround(
                                                 10.0 * std::pow(static_cast<double>(i + 1), -zipf_exponent)))));
      freq[static_cast<std::size_t>(head + i)] = f;
      tail_sum += f;
    }
    const double head_w = std::accumulate(w.begin(), w.begin() + head, 0.0);
    const double a = static_cast<double>(n_images - tail_sum) / head_w;
    for (int i = 0; i < head; ++i)
      freq[static_cast<std::size_t>(i)] =
          std::max(11, static_cast<int>(std::llround(a * w[static_cast<std::size_t>(i)])));
  }

  for (int& f : freq) f = std::min(f, n_images);
  // Rounding may leave the coverage short; grow ranks that can absorb more
  // images without changing bucket.
  long guard = static_cast<long>(n_images) * k + 8;
  for (std::size_t i = 0; total() < n_images; i = (i + 1) % freq.size()) {
    if (freq[i] < n_images && bucket_for(freq[i] + 1) == bucket_for(freq[i])) ++freq[i];
    if (--guard < 0)
      throw GenerationError("frequency plan cannot cover every image with at least one category");
  }

  for (Bucket b : {Bucket::Rare, Bucket::Common, Bucket::Frequent})
    if (!has_bucket(b))
      throw GenerationError(std::string("frequency plan cannot realize a ") + to_string(b) +
                            " category with the given parameters");
  if (!std::is_sorted(freq.rbegin(), freq.rend()))
    std::sort(freq.rbegin(), freq.rend());
  return freq;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Rendering
// ---------------------------------------------------------------------------

namespace detail {

inline bool point_in_shape(int shape, double px, double py, const Box& b) {
  const double cx = 0.5 * (b.x1 + b.x2), cy = 0.5 * (b.y1 + b.y2);
  const double rx = 0.5 * b.width(), ry = 0.5 * b.height();
  switch (shape) {
    case 0: {  // circle (ellipse within the box)
      const double nx = (px - cx) / rx, ny = (py - cy) / ry;
      return nx * nx + ny * ny <= 1.0;
    }
    case 1:  // square
      return px >= b.x1 && px < b.x2 && py >= b.y1 && py < b.y2;
    case 2: {  // triangle, apex up
      if (py < b.y1 || py >= b.y2) return false;
      const double frac = (py - b.y1) / (b.y2 - b.y1);  // 0 at apex row
      const double half = rx * frac;
      return std::abs(px - cx) <= half;
    }
    default: {  // diamond
      return std::abs(px - cx) / rx + std::abs(py - cy) / ry <= 1.0;
    }
  }
}

inline float texture_factor(int texture, int lx, int ly) {
  switch (texture) {
    case 0: return 1.0f;                                    // solid
    case 1: return (ly / 3) % 2 == 0 ? 1.0f : 0.40f;        // striped
    case 2: return (lx % 5 < 2 && ly % 5 < 2) ? 1.0f : 0.45f;  // dotted
    default: return ((lx / 4 + ly / 4) % 2 == 0) ? 1.0f : 0.35f;  // checker
  }
}

inline void render_object(AnnotatedImage& img, const Box& b, const CategoryAttrs& attrs, float gain) {
  const std::size_t plane = static_cast<std::size_t>(img.width) * img.height;
  const ColorDef& col = kColors[attrs.color];
  const int ix1 = std::max(0, static_cast<int>(std::floor(b.x1)));
  const int iy1 = std::max(0, static_cast<int>(std::floor(b.y1)));
  const int ix2 = std::min(img.width, static_cast<int>(std::ceil(b.x2)));
  const int iy2 = std::min(img.height, static_cast<int>(std::ceil(b.y2)));
  for (int y = iy1; y < iy2; ++y)
    for (int x = ix1; x < ix2; ++x) {
      if (!point_in_shape(attrs.shape, x + 0.5, y + 0.5, b)) continue;
      const float f = texture_factor(attrs.texture, x - ix1, y - iy1) * gain;
      const std::size_t off = static_cast<std::size_t>(y) * img.width + x;
      img.pixels[off] = std::min(1.0f, col.r * f);
      img.pixels[plane + off] = std::min(1.0f, col.g * f);
      img.pixels[2 * plane + off] = std::min(1.0f, col.b * f);
    }
}

inline void quantize_to_bytes(std::vector<float>& px) {
  for (float& v : px) {
    float c = v < 0.f ? 0.f : (v > 1.f ? 1.f : v);
    v = static_cast<float>(static_cast<int>(c * 255.0f + 0.5f)) / 255.0f;
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Generator
// ---------------------------------------------------------------------------

/// Deterministic long-tail corpus. Each category has a distinct
/// (color, texture, shape) appearance with a unique color; per-category
/// image frequencies follow the planned Zipf head with LVIS buckets
/// guaranteed; 1-6 objects per image. Manifest frequencies equal realized
/// occurrence counts by construction (and are re-counted at the end).
inline Dataset generate_dataset(std::uint64_t seed, int n_categories, int n_images,
                                double zipf_exponent, int image_size = 128) {
  if (n_categories < 3) throw GenerationError("need at least 3 categories");
  if (n_images < n_categories) throw GenerationError("need n_images >= n_categories");
  if (n_categories > kNumColors)
    throw GenerationError("at most " + std::to_string(kNumColors) + " categories supported");

  Rng root(seed, "gridclip-corpus");
  std::vector<int> freq = detail::plan_frequencies(n_categories, n_images, zipf_exponent);

  // Distinct colors; shapes and textures cycle through shuffled tables.
  std::vector<int> colors(kNumColors), shapes(kNumShapes), textures(kNumTextures);
  std::iota(colors.begin(), colors.end(), 0);
  std::iota(shapes.begin(), shapes.end(), 0);
  std::iota(textures.begin(), textures.end(), 0);
  Rng attr_rng = root.derive("attributes");
  attr_rng.shuffle(colors);
  attr_rng.shuffle(shapes);
  attr_rng.shuffle(textures);

  CorpusManifest manifest;
  manifest.seed = seed;
  manifest.n_images = n_images;
  manifest.image_size = image_size;
  for (int k = 0; k < n_categories; ++k) {
    CategoryInfo info;
    info.attrs.color = colors[static_cast<std::size_t>(k)];
    info.attrs.shape = shapes[static_cast<std::size_t>(k % kNumShapes)];
    info.attrs.texture = textures[static_cast<std::size_t>((k / kNumShapes) % kNumTextures)];
    info.name = std::string(kColors[info.attrs.color].name) + "-" +
                kTextures[info.attrs.texture] + "-" + kShapes[info.attrs.shape];
    info.frequency = freq[static_cast<std::size_t>(k)];
    manifest.categories.push_back(std::move(info));
  }

  // Deal category->image memberships realizing the planned frequencies:
  // one slot to every image first (coverage), remaining slots to random
  // images not already holding that category.
  Rng deal_rng = root.derive("dealing");
  std::vector<std::vector<int>> image_cats(static_cast<std::size_t>(n_images));
  std::vector<int> slots;
  for (int k = 0; k < n_categories; ++k)
    for (int i = 0; i < freq[static_cast<std::size_t>(k)]; ++i) slots.push_back(k);
  deal_rng.shuffle(slots);

  std::vector<int> image_order(static_cast<std::size_t>(n_images));
  std::iota(image_order.begin(), image_order.end(), 0);
  deal_rng.shuffle(image_order);

  std::size_t cursor = 0;
  for (int img : image_order) image_cats[static_cast<std::size_t>(img)].push_back(slots[cursor++]);
  for (; cursor < slots.size(); ++cursor) {
    const int cat = slots[cursor];
    bool placed = false;
    for (int attempt = 0; attempt < 64 && !placed; ++attempt) {
      const int img = static_cast<int>(deal_rng.index(static_cast<std::uint64_t>(n_images)));
      auto& cats = image_cats[static_cast<std::size_t>(img)];
      if (cats.size() < 6 && std::find(cats.begin(), cats.end(), cat) == cats.end()) {
        cats.push_back(cat);
        placed = true;
      }
    }
    if (!placed) {  // deterministic fallback scan
      for (int img = 0; img < n_images && !placed; ++img) {
        auto& cats = image_cats[static_cast<std::size_t>(img)];
        if (cats.size() < 6 && std::find(cats.begin(), cats.end(), cat) == cats.end()) {
          cats.push_back(cat);
          placed = true;
        }
      }
    }
    if (!placed) throw GenerationError("cannot place all category occurrences; corpus too dense");
  }

  Dataset ds;
  ds.manifest = manifest;
  const std::size_t plane = static_cast<std::size_t>(image_size) * image_size;
  for (int i = 0; i < n_images; ++i) {
    Rng img_rng = root.derive(static_cast<std::uint64_t>(i) + 1);
    AnnotatedImage img;
    char idbuf[16];
    std::snprintf(idbuf, sizeof(idbuf), "img_%06d", i);
    img.id = idbuf;
    img.width = img.height = image_size;
    img.pixels.assign(plane * 3, 0.f);
    const float base = static_cast<float>(img_rng.uniform(0.16, 0.30));
    for (std::size_t p = 0; p < plane; ++p) {
      const float n = static_cast<float>(img_rng.uniform(-0.05, 0.05));
      for (int c = 0; c < 3; ++c)
        img.pixels[static_cast<std::size_t>(c) * plane + p] =
            base + n + static_cast<float>(img_rng.uniform(-0.015, 0.015));
    }

    // One object per assigned category, then optional duplicates up to 6.
    std::vector<int> objects = image_cats[static_cast<std::size_t>(i)];
    while (objects.size() < 6 && img_rng.bernoulli(0.25))
      objects.push_back(objects[img_rng.index(objects.size())]);
    img_rng.shuffle(objects);

    for (int cat : objects) {
      const double min_side = 10.0, max_side = std::min(90.0, image_size - 6.0);
      Box placed;
      for (int attempt = 0; attempt < 25; ++attempt) {
        const double s = std::exp(img_rng.uniform(std::log(min_side + 2.0), std::log(max_side)));
        const double ar = img_rng.uniform(0.65, 1.55);
        double w = std::min(max_side, std::max(min_side, s * std::sqrt(ar)));
        double h = std::min(max_side, std::max(min_side, s / std::sqrt(ar)));
        const double x1 = img_rng.uniform(1.0, image_size - w - 1.0);
        const double y1 = img_rng.uniform(1.0, image_size - h - 1.0);
        placed = Box{x1, y1, x1 + w, y1 + h};
        bool ok = true;
        for (const Box& other : img.boxes)
          if (box_iou(placed, other) > 0.40) ok = false;
        if (ok) break;
      }
      const float gain = static_cast<float>(img_rng.uniform(0.92, 1.08));
      detail::render_object(img, placed, manifest.categories[static_cast<std::size_t>(cat)].attrs, gain);
      img.boxes.push_back(placed);
      img.labels.push_back(manifest.categories[static_cast<std::size_t>(cat)].name);
    }
    detail::quantize_to_bytes(img.pixels);
    ds.images.push_back(std::move(img));
  }

  // Manifest frequencies must equal actual occurrence counts.
  std::vector<int> actual(static_cast<std::size_t>(n_categories), 0);
  for (const auto& img : ds.images) {
    std::set<std::string> distinct(img.labels.begin(), img.labels.end());
    for (const auto& name : distinct) {
      const int k = ds.manifest.category_index(name);
      ++actual[static_cast<std::size_t>(k)];
    }
  }
  for (int k = 0; k < n_categories; ++k) {
    auto& info = ds.manifest.categories[static_cast<std::size_t>(k)];
    if (actual[static_cast<std::size_t>(k)] != info.frequency)
      throw GenerationError("internal: realized frequency mismatch for " + info.name);
    info.bucket = bucket_for(info.frequency);
    info.split = info.bucket == Bucket::Rare ? Split::Novel : Split::Base;
  }
  return ds;
}

// ---------------------------------------------------------------------------
// Dataset I/O: manifest.json + annotations.jsonl + images/*.ppm
// ---------------------------------------------------------------------------

inline void save_dataset(const Dataset& ds, const std::string& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(fs::path(dir) / "images");

  nlohmann::json m;
  m["seed"] = ds.manifest.seed;
  m["n_images"] = ds.manifest.n_images;
  m["image_size"] = ds.manifest.image_size;
  auto& cats = m["categories"] = nlohmann::json::array();
  for (const auto& c : ds.manifest.categories) {
    cats.push_back({{"name", c.name},
                    {"frequency", c.frequency},
                    {"bucket", to_string(c.bucket)},
                    {"split", to_string(c.split)},
                    {"shape", kShapes[c.attrs.shape]},
                    {"color", kColors[c.attrs.color].name},
                    {"texture", kTextures[c.attrs.texture]}});
  }
  std::ofstream mf(fs::path(dir) / "manifest.json");
  mf << m.dump(2) << "\n";

  std::ofstream ann(fs::path(dir) / "annotations.jsonl");
  for (const auto& img : ds.images) {
    const std::string file = "images/" + img.id + ".ppm";
    write_ppm((fs::path(dir) / file).string(), img.width, img.height, img.pixels);
    nlohmann::json rec;
    rec["image_id"] = img.id;
    rec["file"] = file;
    auto& bx = rec["boxes"] = nlohmann::json::array();
    for (const auto& b : img.boxes) bx.push_back({b.x1, b.y1, b.x2, b.y2});
    rec["labels"] = img.labels;
    ann << rec.dump() << "\n";
  }
}

inline Dataset load_dataset(const std::string& dir) {
  namespace fs = std::filesystem;
  Dataset ds;
  {
    std::ifstream mf(fs::path(dir) / "manifest.json");
    if (!mf) throw std::runtime_error("cannot open manifest in " + dir);
    nlohmann::json m = nlohmann::json::parse(mf);
    ds.manifest.seed = m.at("seed").get<std::uint64_t>();
    ds.manifest.n_images = m.at("n_images").get<int>();
    ds.manifest.image_size = m.at("image_size").get<int>();
    for (const auto& c : m.at("categories")) {
      CategoryInfo info;
      info.name = c.at("name").get<std::string>();
      info.frequency = c.at("frequency").get<int>();
      const std::string b = c.at("bucket").get<std::string>();
      info.bucket = b == "rare" ? Bucket::Rare : (b == "common" ? Bucket::Common : Bucket::Frequent);
      info.split = c.at("split").get<std::string>() == "novel" ? Split::Novel : Split::Base;
      const std::string shape = c.at("shape").get<std::string>();
      const std::string color = c.at("color").get<std::string>();
      const std::string texture = c.at("texture").get<std::string>();
      for (int i = 0; i < kNumShapes; ++i)
        if (shape == kShapes[i]) info.attrs.shape = i;
      for (int i = 0; i < kNumColors; ++i)
        if (color == kColors[i].name) info.attrs.color = i;
      for (int i = 0; i < kNumTextures; ++i)
        if (texture == kTextures[i]) info.attrs.texture = i;
      ds.manifest.categories.push_back(std::move(info));
    }
  }
  std::ifstream ann(fs::path(dir) / "annotations.jsonl");
  if (!ann) throw std::runtime_error("cannot open annotations in " + dir);
  std::string line;
  while (std::getline(ann, line)) {
    if (line.empty()) continue;
    nlohmann::json rec = nlohmann::json::parse(line);
    AnnotatedImage img;
    img.id = rec.at("image_id").get<std::string>();
    read_ppm((fs::path(dir) / rec.at("file").get<std::string>()).string(), img.width, img.height,
             img.pixels);
    for (const auto& b : rec.at("boxes"))
      img.boxes.push_back(Box{b.at(0).get<double>(), b.at(1).get<double>(), b.at(2).get<double>(),
                              b.at(3).get<double>()});
    img.labels = rec.at("labels").get<std::vector<std::string>>();
    ds.images.push_back(std::move(img));
  }
  return ds;
}

/// Training view for the open-set protocol: boxes of novel categories are
/// dropped (the images stay, carrying distillation signal only).
inline Dataset drop_novel_boxes(const Dataset& ds) {
  Dataset out;
  out.manifest = ds.manifest;
  for (const auto& img : ds.images) {
    AnnotatedImage copy = img;
    copy.boxes.clear();
    copy.labels.clear();
    for (std::size_t i = 0; i < img.boxes.size(); ++i) {
      const int k = ds.manifest.category_index(img.labels[i]);
      if (k >= 0 && ds.manifest.categories[static_cast<std::size_t>(k)].split == Split::Base) {
        copy.boxes.push_back(img.boxes[i]);
        copy.labels.push_back(img.labels[i]);
      }
    }
    out.images.push_back(std::move(copy));
  }
  return out;
}

}  // namespace gridclip
