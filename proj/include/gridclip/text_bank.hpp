#pragma once

#include <cstring>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "gridclip/config.hpp"
#include "gridclip/rng.hpp"
#include "gridclip/synth_data.hpp"

namespace gridclip {

struct BankError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

enum class BankProvenance { Synthetic, File };

/// Category text embeddings T_k. Rows are float32 and L2-normalized; the
/// bank is immutable after construction.
struct EmbeddingBank {
  std::vector<std::string> names;
  std::vector<Split> split;
  std::vector<float> vectors;  // row-major K x dim
  int dim = 0;
  BankProvenance provenance = BankProvenance::Synthetic;

  int size() const { return static_cast<int>(names.size()); }
  const float* row(int k) const { return &vectors[static_cast<std::size_t>(k) * dim]; }

  int index_of(const std::string& name) const {
    for (std::size_t i = 0; i < names.size(); ++i)
      if (names[i] == name) return static_cast<int>(i);
    return -1;
  }

  void check_invariants() const {
    if (names.empty()) throw BankError("bank must hold at least one category");
    std::set<std::string> uniq(names.begin(), names.end());
    if (uniq.size() != names.size()) throw BankError("bank names must be unique");
    for (int k = 0; k < size(); ++k) {
      double n2 = 0;
      for (int d = 0; d < dim; ++d) n2 += static_cast<double>(row(k)[d]) * row(k)[d];
      if (std::abs(std::sqrt(n2) - 1.0) > 1e-6)
        throw BankError("bank row " + names[static_cast<std::size_t>(k)] + " is not unit norm");
    }
  }

  std::uint64_t content_hash() const {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (const auto& n : names) h = fnv1a64(n, h);
    h = fnv1a64(std::string_view(reinterpret_cast<const char*>(vectors.data()),
                                 vectors.size() * sizeof(float)),
                h);
    return h;
  }
};

/// Substitutes the category name into every template. Each template must
/// contain exactly one "{}" placeholder.
inline std::vector<std::string> build_prompts(const std::string& category,
                                              const std::vector<std::string>& templates) {
  std::vector<std::string> out;
  out.reserve(templates.size());
  for (const auto& tpl : templates) {
    const auto pos = tpl.find("{}");
    if (pos == std::string::npos)
      throw ConfigError("prompt template lacks a {} placeholder: " + tpl);
    if (tpl.find("{}", pos + 2) != std::string::npos)
      throw ConfigError("prompt template has multiple placeholders: " + tpl);
    out.push_back(tpl.substr(0, pos) + category + tpl.substr(pos + 2));
  }
  return out;
}

/// Mean of the per-prompt rows followed by L2 normalization; this is T_k.
inline std::vector<double> ensemble_embeddings(const std::vector<std::vector<double>>& rows) {
  if (rows.empty()) throw BankError("ensemble requires at least one prompt embedding");
  const std::size_t dim = rows.front().size();
  std::vector<double> mean(dim, 0.0);
  for (const auto& r : rows) {
    if (r.size() != dim) throw BankError("ensemble rows must share a dimension");
    for (std::size_t d = 0; d < dim; ++d) mean[d] += r[d];
  }
  double norm2 = 0;
  for (std::size_t d = 0; d < dim; ++d) {
    mean[d] /= static_cast<double>(rows.size());
    norm2 += mean[d] * mean[d];
  }
  const double norm = std::sqrt(norm2);
  if (norm < 1e-12) throw BankError("degenerate prompt ensemble: mean embedding is zero");
  for (auto& v : mean) v /= norm;
  return mean;
}

namespace detail {

inline std::vector<double> hash_unit_vector(std::uint64_t key, int dim) {
  Rng rng(key);
  std::vector<double> v(static_cast<std::size_t>(dim));
  for (auto& x : v) x = rng.normal();
  double n2 = 0;
  for (double x : v) n2 += x * x;
  const double n = std::sqrt(n2);
  for (auto& x : v) x /= n;
  return v;
}

/// Attribute one-hot basis shared by the attribute-informed text embeddings
/// and the teacher's ideal category responses: color block dominates so
/// that category identity is linearly decodable.
inline constexpr int kAttrDim = kNumColors + kNumTextures + kNumShapes;
inline constexpr double kColorWeight = 1.0;
inline constexpr double kTextureWeight = 0.6;
inline constexpr double kShapeWeight = 0.6;

inline std::vector<double> attribute_vector(const CategoryAttrs& attrs) {
  std::vector<double> a(static_cast<std::size_t>(kAttrDim), 0.0);
  a[static_cast<std::size_t>(attrs.color)] = kColorWeight;
  a[static_cast<std::size_t>(kNumColors + attrs.texture)] = kTextureWeight;
  a[static_cast<std::size_t>(kNumColors + kNumTextures + attrs.shape)] = kShapeWeight;
  return a;
}

/// Seeded projection matrix [dim x kAttrDim] for the attribute text space.
inline std::vector<double> attr_projection(std::uint64_t seed, int dim) {
  Rng rng(seed, "text-attr-readout");
  std::vector<double> m(static_cast<std::size_t>(dim) * kAttrDim);
  const double scale = 1.0 / std::sqrt(static_cast<double>(kAttrDim));
  for (auto& v : m) v = rng.normal() * scale;
  return m;
}

}  // namespace detail

/// Deterministic stand-in for the CLIP text encoder. Hash mode draws a unit
/// vector keyed by (seed, prompt) per template and ensembles them; attribute
/// mode projects the category's renderable attributes through a fixed seeded
/// linear map so teacher and text spaces stay relatable.
inline std::vector<double> synth_category_embed(const std::string& category, std::uint64_t seed,
                                                int embed_dim, TextMode mode,
                                                const std::vector<std::string>& templates,
                                                const CategoryAttrs* attrs = nullptr) {
  if (category.empty()) throw BankError("category name must be non-empty");
  if (mode == TextMode::Attribute) {
    if (attrs == nullptr) throw BankError("attribute mode requires category attributes");
    const auto m = detail::attr_projection(seed, embed_dim);
    const auto a = detail::attribute_vector(*attrs);
    std::vector<double> v(static_cast<std::size_t>(embed_dim), 0.0);
    for (int d = 0; d < embed_dim; ++d)
      for (int j = 0; j < detail::kAttrDim; ++j)
        v[static_cast<std::size_t>(d)] +=
            m[static_cast<std::size_t>(d) * detail::kAttrDim + j] * a[static_cast<std::size_t>(j)];
    double n2 = 0;
    for (double x : v) n2 += x * x;
    const double n = std::sqrt(n2);
    if (n < 1e-12) throw BankError("degenerate attribute embedding for " + category);
    for (auto& x : v) x /= n;
    return v;
  }
  const auto prompts = build_prompts(category, templates);
  std::vector<std::vector<double>> rows;
  rows.reserve(prompts.size());
  for (const auto& p : prompts) rows.push_back(detail::hash_unit_vector(fnv1a64(p, seed), embed_dim));
  return ensemble_embeddings(rows);
}

namespace detail {

inline void push_row(EmbeddingBank& bank, const std::string& name, Split split,
                     const std::vector<double>& v) {
  bank.names.push_back(name);
  bank.split.push_back(split);
  for (double x : v) bank.vectors.push_back(static_cast<float>(x));
}

}  // namespace detail

/// Builds the synthetic bank over the given categories (manifest order).
inline EmbeddingBank build_synthetic_bank(const CorpusManifest& manifest,
                                          const std::vector<std::string>& names,
                                          std::uint64_t seed, int embed_dim, TextMode mode,
                                          const std::vector<std::string>& templates) {
  EmbeddingBank bank;
  bank.dim = embed_dim;
  bank.provenance = BankProvenance::Synthetic;
  for (const auto& name : names) {
    const int k = manifest.category_index(name);
    if (k < 0) throw BankError("category not in manifest: " + name);
    const auto& info = manifest.categories[static_cast<std::size_t>(k)];
    detail::push_row(bank, name, info.split,
                     synth_category_embed(name, seed, embed_dim, mode, templates, &info.attrs));
  }
  bank.check_invariants();
  return bank;
}

/// Appends novel categories to a bank; base rows are preserved bitwise.
inline EmbeddingBank extend_bank_open_set(
    const EmbeddingBank& base,
    const std::vector<std::pair<std::string, std::vector<double>>>& novel) {
  EmbeddingBank out = base;
  for (const auto& [name, vec] : novel) {
    if (out.index_of(name) >= 0) throw BankError("open-set extension duplicates category: " + name);
    if (static_cast<int>(vec.size()) != base.dim)
      throw BankError("novel embedding dimension mismatch for " + name);
    detail::push_row(out, name, Split::Novel, vec);
  }
  if (!novel.empty()) out.check_invariants();
  return out;
}

// ---------------------------------------------------------------------------
// File format: magic + u64 header length + JSON header + little-endian f32
// matrix. Round-trips bitwise.
// ---------------------------------------------------------------------------

inline constexpr char kBankMagic[8] = {'G', 'C', 'B', 'A', 'N', 'K', '1', '\n'};

inline void save_bank(const EmbeddingBank& bank, const std::string& path) {
  nlohmann::json header;
  header["dim"] = bank.dim;
  header["names"] = bank.names;
  auto& splits = header["splits"] = nlohmann::json::array();
  for (Split s : bank.split) splits.push_back(to_string(s));
  header["provenance"] = bank.provenance == BankProvenance::Synthetic ? "synthetic" : "file";
  const std::string htext = header.dump();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw BankError("cannot write bank: " + path);
  out.write(kBankMagic, sizeof(kBankMagic));
  const std::uint64_t hlen = htext.size();
  out.write(reinterpret_cast<const char*>(&hlen), sizeof(hlen));
  out.write(htext.data(), static_cast<std::streamsize>(htext.size()));
  out.write(reinterpret_cast<const char*>(bank.vectors.data()),
            static_cast<std::streamsize>(bank.vectors.size() * sizeof(float)));
}

inline EmbeddingBank load_bank(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw BankError("cannot open bank: " + path);
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kBankMagic, sizeof(magic)) != 0)
    throw BankError("not a gridclip embedding bank: " + path);
  std::uint64_t hlen = 0;
  in.read(reinterpret_cast<char*>(&hlen), sizeof(hlen));
  std::string htext(hlen, '\0');
  in.read(htext.data(), static_cast<std::streamsize>(hlen));
  const auto header = nlohmann::json::parse(htext);
  EmbeddingBank bank;
  bank.dim = header.at("dim").get<int>();
  bank.names = header.at("names").get<std::vector<std::string>>();
  for (const auto& s : header.at("splits"))
    bank.split.push_back(s.get<std::string>() == "novel" ? Split::Novel : Split::Base);
  bank.provenance =
      header.at("provenance").get<std::string>() == "file" ? BankProvenance::File : BankProvenance::Synthetic;
  bank.vectors.resize(bank.names.size() * static_cast<std::size_t>(bank.dim));
  in.read(reinterpret_cast<char*>(bank.vectors.data()),
          static_cast<std::streamsize>(bank.vectors.size() * sizeof(float)));
  if (!in) throw BankError("truncated bank: " + path);
  bank.check_invariants();
  return bank;
}

}  // namespace gridclip
