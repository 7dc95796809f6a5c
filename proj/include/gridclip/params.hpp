#pragma once

#include <cstring>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "gridclip/rng.hpp"
#include "gridclip/tape.hpp"
#include "gridclip/tensor.hpp"

namespace gridclip {

enum class ParamGroup { Backbone, Head };

/// Ordered container of named parameter tensors. Order is the registration
/// order and is part of the determinism contract (flattened gradients,
/// optimizer state and checkpoints all follow it).
template <typename S>
class ParamStore {
 public:
  struct Entry {
    std::string name;
    ParamGroup group;
    Tensor<S> value;
  };

  std::size_t add(std::string name, ParamGroup group, Tensor<S> value) {
    if (index_.count(name)) throw std::invalid_argument("duplicate parameter: " + name);
    index_[name] = entries_.size();
    entries_.push_back(Entry{std::move(name), group, std::move(value)});
    return entries_.size() - 1;
  }

  Tensor<S>& operator[](const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::out_of_range("no parameter named " + name);
    return entries_[it->second].value;
  }
  const Tensor<S>& operator[](const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::out_of_range("no parameter named " + name);
    return entries_[it->second].value;
  }

  std::vector<Entry>& entries() { return entries_; }
  const std::vector<Entry>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }

  std::size_t total_scalars() const {
    std::size_t n = 0;
    for (const auto& e : entries_) n += e.value.numel();
    return n;
  }

  /// Registers every parameter as a differentiable tape leaf; the returned
  /// ids are aligned with entries().
  std::vector<ad::VarId> bind(ad::Tape<S>& tape) const {
    std::vector<ad::VarId> ids;
    ids.reserve(entries_.size());
    for (const auto& e : entries_) ids.push_back(tape.leaf(e.value, true));
    return ids;
  }

  std::uint64_t content_hash() const {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (const auto& e : entries_) {
      h = fnv1a64(e.name, h);
      h = fnv1a64(std::string_view(reinterpret_cast<const char*>(e.value.data.data()),
                                   e.value.data.size() * sizeof(S)),
                  h);
    }
    return h;
  }

 private:
  std::vector<Entry> entries_;
  std::map<std::string, std::size_t> index_;
};

// ---------------------------------------------------------------------------
// Checkpoint container: magic + version + JSON manifest + raw float32 data.
// ---------------------------------------------------------------------------

inline constexpr char kCheckpointMagic[8] = {'G', 'C', 'C', 'K', 'P', 'T', '1', '\n'};

template <typename S>
void save_checkpoint(const ParamStore<S>& params, const std::string& config_text,
                     const std::string& path) {
  nlohmann::json manifest;
  manifest["version"] = 1;
  manifest["config"] = config_text;
  auto& plist = manifest["params"] = nlohmann::json::array();
  for (const auto& e : params.entries()) {
    plist.push_back({{"name", e.name},
                     {"group", e.group == ParamGroup::Backbone ? "backbone" : "head"},
                     {"shape", e.value.shape}});
  }
  const std::string header = manifest.dump();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write checkpoint: " + path);
  out.write(kCheckpointMagic, sizeof(kCheckpointMagic));
  const std::uint64_t hlen = header.size();
  out.write(reinterpret_cast<const char*>(&hlen), sizeof(hlen));
  out.write(header.data(), static_cast<std::streamsize>(header.size()));
  for (const auto& e : params.entries()) {
    std::vector<float> f32(e.value.data.begin(), e.value.data.end());
    out.write(reinterpret_cast<const char*>(f32.data()),
              static_cast<std::streamsize>(f32.size() * sizeof(float)));
  }
}

struct CheckpointData {
  std::string config_text;
  std::vector<std::string> names;
  std::vector<ParamGroup> groups;
  std::vector<Tensor<float>> tensors;
};

inline CheckpointData load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint: " + path);
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kCheckpointMagic, sizeof(magic)) != 0)
    throw std::runtime_error("not a gridclip checkpoint: " + path);
  std::uint64_t hlen = 0;
  in.read(reinterpret_cast<char*>(&hlen), sizeof(hlen));
  std::string header(hlen, '\0');
  in.read(header.data(), static_cast<std::streamsize>(hlen));
  const auto manifest = nlohmann::json::parse(header);
  if (manifest.at("version").get<int>() != 1)
    throw std::runtime_error("unsupported checkpoint version");
  CheckpointData ck;
  ck.config_text = manifest.at("config").get<std::string>();
  for (const auto& p : manifest.at("params")) {
    ck.names.push_back(p.at("name").get<std::string>());
    ck.groups.push_back(p.at("group").get<std::string>() == "backbone" ? ParamGroup::Backbone
                                                                        : ParamGroup::Head);
    std::vector<int> shape = p.at("shape").get<std::vector<int>>();
    Tensor<float> t(shape);
    in.read(reinterpret_cast<char*>(t.data.data()),
            static_cast<std::streamsize>(t.data.size() * sizeof(float)));
    if (!in) throw std::runtime_error("truncated checkpoint: " + path);
    ck.tensors.push_back(std::move(t));
  }
  return ck;
}

/// Loads checkpoint tensors into an existing store; names and shapes must
/// match exactly.
template <typename S>
void restore_params(ParamStore<S>& params, const CheckpointData& ck) {
  if (ck.names.size() != params.size())
    throw std::runtime_error("checkpoint parameter count mismatch");
  for (std::size_t i = 0; i < ck.names.size(); ++i) {
    auto& e = params.entries()[i];
    if (e.name != ck.names[i]) throw std::runtime_error("checkpoint name mismatch: " + ck.names[i]);
    if (e.value.shape != ck.tensors[i].shape)
      throw std::runtime_error("checkpoint shape mismatch: " + ck.names[i]);
    for (std::size_t j = 0; j < e.value.numel(); ++j)
      e.value[j] = static_cast<S>(ck.tensors[i][j]);
  }
}

}  // namespace gridclip
