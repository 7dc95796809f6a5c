#pragma once

#include <array>
#include <cstdint>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace gridclip {

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Text-embedding backend for the synthetic bank.
enum class TextMode { Hash, Attribute };

/// Full experiment configuration. Defaults are the desk-scale profile:
/// 128x128 inputs, 12 epochs with decay at {8, 11}, AdamW at 1e-4 with
/// decoupled weight decay 1e-4, grid/image loss weights (1, 10).
struct ExperimentConfig {
  std::uint64_t seed = 0;

  // model dimensions
  int image_height = 128;
  int image_width = 128;
  int embed_dim = 32;
  int teacher_dim = 64;
  int fpn_channels = 32;
  int attn_heads = 4;

  // optimization
  int epochs = 12;
  int batch_size = 16;
  double base_lr = 1e-4;
  double weight_decay = 1e-4;
  double backbone_lr_multiplier = 0.1;
  std::vector<int> lr_decay_epochs = {8, 11};
  double lr_decay_factor = 0.1;
  int warmup_iters = 50;
  double warmup_start_factor = 0.01;
  double grad_clip_norm = 0.1;
  double w_grid = 1.0;
  double w_image = 10.0;

  // classification score scale: tau = 1 reproduces the plain cosine scores;
  // learnable_tau trains a scalar initialized at tau_init instead.
  double tau = 1.0;
  bool learnable_tau = false;
  double tau_init = 20.0;

  // losses
  double focal_alpha = 0.25;
  double focal_gamma = 2.0;
  bool centerness_weighted_reg = false;
  bool normalize_image_align = false;

  // inference
  double score_threshold = 0.05;
  double nms_iou = 0.5;
  int max_detections = 300;
  int pre_nms_topk = 1000;
  bool score_with_centerness = true;

  // target assignment; empty means the FCOS ladder (0,64,128,256,512,inf)
  // scaled by image_height / 800.
  std::vector<std::pair<double, double>> scale_ranges;

  // data and augmentation
  double repeat_threshold = 0.001;
  double flip_prob = 0.5;
  std::vector<std::pair<int, int>> resize_sizes;  // (long, short); empty = identity
  double crop_min_fraction = 0.0;                 // 0 disables random crop
  std::array<double, 3> pixel_mean = {0.5, 0.5, 0.5};
  std::array<double, 3> pixel_std = {0.25, 0.25, 0.25};

  // text bank
  TextMode text_mode = TextMode::Attribute;
  std::vector<std::string> prompt_templates = {
      "a photo of a {}.",          "a photo of the {}.",        "a photo of one {}.",
      "a photo of a small {}.",    "a photo of a large {}.",    "there is a {} in the scene.",
      "a cropped photo of a {}."};

  static constexpr double kUnbounded = std::numeric_limits<double>::infinity();

  std::vector<std::pair<double, double>> effective_scale_ranges() const {
    if (!scale_ranges.empty()) return scale_ranges;
    const double f = static_cast<double>(image_height) / 800.0;
    return {{0.0, 64 * f}, {64 * f, 128 * f}, {128 * f, 256 * f}, {256 * f, 512 * f}, {512 * f, kUnbounded}};
  }

  void validate() const {
    if (epochs < 0) throw ConfigError("epochs must be >= 0");
    if (batch_size <= 0) throw ConfigError("batch_size must be > 0");
    if (!(lr_decay_factor > 0.0 && lr_decay_factor < 1.0))
      throw ConfigError("lr_decay_factor must lie in (0,1)");
    for (int e : lr_decay_epochs)
      if (e >= epochs) throw ConfigError("lr decay epoch " + std::to_string(e) + " must be < epochs");
    if (score_threshold < 0.0 || score_threshold >= 1.0)
      throw ConfigError("score_threshold must lie in [0,1)");
    if (!(nms_iou > 0.0 && nms_iou <= 1.0)) throw ConfigError("nms_iou must lie in (0,1]");
    if (max_detections <= 0) throw ConfigError("max_detections must be > 0");
    if (warmup_iters < 0) throw ConfigError("warmup_iters must be >= 0");
    if (image_height % 32 != 0 || image_width % 32 != 0)
      throw ConfigError("image size must be a multiple of 32");
    if (embed_dim <= 0 || teacher_dim <= 0 || fpn_channels <= 0)
      throw ConfigError("dimensions must be positive");
    auto ranges = effective_scale_ranges();
    if (ranges.size() != 5) throw ConfigError("exactly 5 scale ranges required");
    double prev_hi = 0.0;
    for (std::size_t i = 0; i < ranges.size(); ++i) {
      if (ranges[i].first != prev_hi) throw ConfigError("scale ranges must be contiguous");
      if (!(ranges[i].second > ranges[i].first)) throw ConfigError("scale ranges must increase");
      prev_hi = ranges[i].second;
    }
    if (ranges.back().second != kUnbounded) throw ConfigError("last scale range must be unbounded");
    if (!(repeat_threshold > 0.0 && repeat_threshold < 1.0))
      throw ConfigError("repeat_threshold must lie in (0,1)");
  }
};

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

inline std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, sep)) out.push_back(trim(item));
  return out;
}

}  // namespace detail

/// Parses the human-readable `key = value` config format. Unknown keys are
/// rejected so typos fail loudly.
inline ExperimentConfig parse_config(std::istream& in) {
  ExperimentConfig c;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("line " + std::to_string(lineno) + ": expected key = value");
    const std::string key = detail::trim(line.substr(0, eq));
    const std::string val = detail::trim(line.substr(eq + 1));
    auto as_d = [&] { return std::stod(val); };
    auto as_i = [&] { return std::stoi(val); };
    auto as_b = [&] {
      if (val == "true" || val == "1") return true;
      if (val == "false" || val == "0") return false;
      throw ConfigError(key + ": expected boolean");
    };
    if (key == "seed") c.seed = static_cast<std::uint64_t>(std::stoull(val));
    else if (key == "image_size") {
      auto parts = detail::split(val, 'x');
      if (parts.size() != 2) throw ConfigError("image_size: expected HxW");
      c.image_height = std::stoi(parts[0]);
      c.image_width = std::stoi(parts[1]);
    } else if (key == "embed_dim") c.embed_dim = as_i();
    else if (key == "teacher_dim") c.teacher_dim = as_i();
    else if (key == "fpn_channels") c.fpn_channels = as_i();
    else if (key == "attn_heads") c.attn_heads = as_i();
    else if (key == "epochs") c.epochs = as_i();
    else if (key == "batch_size") c.batch_size = as_i();
    else if (key == "base_lr") c.base_lr = as_d();
    else if (key == "weight_decay") c.weight_decay = as_d();
    else if (key == "backbone_lr_multiplier") c.backbone_lr_multiplier = as_d();
    else if (key == "lr_decay_epochs") {
      c.lr_decay_epochs.clear();
      for (const auto& p : detail::split(val, ',')) c.lr_decay_epochs.push_back(std::stoi(p));
    } else if (key == "lr_decay_factor") c.lr_decay_factor = as_d();
    else if (key == "warmup_iters") c.warmup_iters = as_i();
    else if (key == "warmup_start_factor") c.warmup_start_factor = as_d();
    else if (key == "grad_clip_norm") c.grad_clip_norm = as_d();
    else if (key == "w_grid") c.w_grid = as_d();
    else if (key == "w_image") c.w_image = as_d();
    else if (key == "tau") c.tau = as_d();
    else if (key == "learnable_tau") c.learnable_tau = as_b();
    else if (key == "tau_init") c.tau_init = as_d();
    else if (key == "focal_alpha") c.focal_alpha = as_d();
    else if (key == "focal_gamma") c.focal_gamma = as_d();
    else if (key == "centerness_weighted_reg") c.centerness_weighted_reg = as_b();
    else if (key == "normalize_image_align") c.normalize_image_align = as_b();
    else if (key == "score_threshold") c.score_threshold = as_d();
    else if (key == "nms_iou") c.nms_iou = as_d();
    else if (key == "max_detections") c.max_detections = as_i();
    else if (key == "pre_nms_topk") c.pre_nms_topk = as_i();
    else if (key == "score_with_centerness") c.score_with_centerness = as_b();
    else if (key == "scale_ranges") {
      c.scale_ranges.clear();
      for (const auto& p : detail::split(val, ',')) {
        auto lohi = detail::split(p, ':');
        if (lohi.size() != 2) throw ConfigError("scale_ranges: expected lo:hi pairs");
        const double hi = (lohi[1] == "inf") ? ExperimentConfig::kUnbounded : std::stod(lohi[1]);
        c.scale_ranges.emplace_back(std::stod(lohi[0]), hi);
      }
    } else if (key == "repeat_threshold") c.repeat_threshold = as_d();
    else if (key == "flip_prob") c.flip_prob = as_d();
    else if (key == "resize_sizes") {
      c.resize_sizes.clear();
      for (const auto& p : detail::split(val, ',')) {
        auto ls = detail::split(p, ':');
        if (ls.size() != 2) throw ConfigError("resize_sizes: expected long:short pairs");
        c.resize_sizes.emplace_back(std::stoi(ls[0]), std::stoi(ls[1]));
      }
    } else if (key == "crop_min_fraction") c.crop_min_fraction = as_d();
    else if (key == "pixel_mean") {
      auto p = detail::split(val, ',');
      if (p.size() != 3) throw ConfigError("pixel_mean: expected 3 values");
      for (int i = 0; i < 3; ++i) c.pixel_mean[static_cast<std::size_t>(i)] = std::stod(p[static_cast<std::size_t>(i)]);
    } else if (key == "pixel_std") {
      auto p = detail::split(val, ',');
      if (p.size() != 3) throw ConfigError("pixel_std: expected 3 values");
      for (int i = 0; i < 3; ++i) c.pixel_std[static_cast<std::size_t>(i)] = std::stod(p[static_cast<std::size_t>(i)]);
    } else if (key == "text_mode") {
      if (val == "hash") c.text_mode = TextMode::Hash;
      else if (val == "attribute") c.text_mode = TextMode::Attribute;
      else throw ConfigError("text_mode: expected hash|attribute");
    } else if (key == "prompt_templates") {
      c.prompt_templates = detail::split(val, '|');
    } else {
      throw ConfigError("unknown config key: " + key);
    }
  }
  c.validate();
  return c;
}

inline ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file: " + path);
  return parse_config(in);
}

inline void save_config(const ExperimentConfig& c, std::ostream& out) {
  out << "seed = " << c.seed << "\n";
  out << "image_size = " << c.image_height << "x" << c.image_width << "\n";
  out << "embed_dim = " << c.embed_dim << "\n";
  out << "teacher_dim = " << c.teacher_dim << "\n";
  out << "fpn_channels = " << c.fpn_channels << "\n";
  out << "attn_heads = " << c.attn_heads << "\n";
  out << "epochs = " << c.epochs << "\n";
  out << "batch_size = " << c.batch_size << "\n";
  out << "base_lr = " << c.base_lr << "\n";
  out << "weight_decay = " << c.weight_decay << "\n";
  out << "backbone_lr_multiplier = " << c.backbone_lr_multiplier << "\n";
  out << "lr_decay_epochs = ";
  for (std::size_t i = 0; i < c.lr_decay_epochs.size(); ++i)
    out << (i ? "," : "") << c.lr_decay_epochs[i];
  out << "\n";
  out << "lr_decay_factor = " << c.lr_decay_factor << "\n";
  out << "warmup_iters = " << c.warmup_iters << "\n";
  out << "warmup_start_factor = " << c.warmup_start_factor << "\n";
  out << "grad_clip_norm = " << c.grad_clip_norm << "\n";
  out << "w_grid = " << c.w_grid << "\n";
  out << "w_image = " << c.w_image << "\n";
  out << "tau = " << c.tau << "\n";
  out << "learnable_tau = " << (c.learnable_tau ? "true" : "false") << "\n";
  out << "tau_init = " << c.tau_init << "\n";
  out << "focal_alpha = " << c.focal_alpha << "\n";
  out << "focal_gamma = " << c.focal_gamma << "\n";
  out << "centerness_weighted_reg = " << (c.centerness_weighted_reg ? "true" : "false") << "\n";
  out << "normalize_image_align = " << (c.normalize_image_align ? "true" : "false") << "\n";
  out << "score_threshold = " << c.score_threshold << "\n";
  out << "nms_iou = " << c.nms_iou << "\n";
  out << "max_detections = " << c.max_detections << "\n";
  out << "pre_nms_topk = " << c.pre_nms_topk << "\n";
  out << "score_with_centerness = " << (c.score_with_centerness ? "true" : "false") << "\n";
  out << "repeat_threshold = " << c.repeat_threshold << "\n";
  out << "flip_prob = " << c.flip_prob << "\n";
  if (!c.resize_sizes.empty()) {
    out << "resize_sizes = ";
    for (std::size_t i = 0; i < c.resize_sizes.size(); ++i)
      out << (i ? "," : "") << c.resize_sizes[i].first << ":" << c.resize_sizes[i].second;
    out << "\n";
  }
  out << "crop_min_fraction = " << c.crop_min_fraction << "\n";
  out << "pixel_mean = " << c.pixel_mean[0] << "," << c.pixel_mean[1] << "," << c.pixel_mean[2] << "\n";
  out << "pixel_std = " << c.pixel_std[0] << "," << c.pixel_std[1] << "," << c.pixel_std[2] << "\n";
  out << "text_mode = " << (c.text_mode == TextMode::Hash ? "hash" : "attribute") << "\n";
  out << "prompt_templates = ";
  for (std::size_t i = 0; i < c.prompt_templates.size(); ++i)
    out << (i ? "|" : "") << c.prompt_templates[i];
  out << "\n";
}

inline void save_config(const ExperimentConfig& c, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write config file: " + path);
  save_config(c, out);
}

}  // namespace gridclip
