#pragma once

#include "gridclip/config.hpp"
#include "gridclip/ops_nn.hpp"
#include "gridclip/params.hpp"
#include "gridclip/text_bank.hpp"

namespace gridclip {

struct ModelError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Backbone stage widths (stem counts as two stages); C3/C4/C5 are the
/// outputs of the last three stages at strides 8/16/32.
struct BackboneDims {
  static constexpr int kStem1 = 16;
  static constexpr int kStem2 = 32;
  static constexpr int kC3 = 32;
  static constexpr int kC4 = 64;
  static constexpr int kC5 = 128;
};

inline constexpr int kNumLevels = 5;
inline constexpr int kLevelStrides[kNumLevels] = {8, 16, 32, 64, 128};

template <typename S>
struct BackboneOut {
  ad::VarId c3, c4, c5;
};

template <typename S>
struct PooledPairVars {
  ad::VarId z_bar;  // [D_attn]
  ad::VarId z;      // [D_attn, H5, W5]
};

template <typename S>
struct LevelOut {
  ad::VarId pyramid = ad::kNoVar;     // P_i
  ad::VarId grid_embed = ad::kNoVar;  // G_i [embed_dim, H, W]
  ad::VarId scores = ad::kNoVar;      // S_i [K, H, W], tau-scaled cosines
  ad::VarId deltas = ad::kNoVar;      // [4, H, W] (l, t, r, b) in pixels
  ad::VarId ctr_logits = ad::kNoVar;  // [1, H, W]
  int h = 0, w = 0, stride = 0;
};

template <typename S>
struct ForwardOut {
  std::vector<LevelOut<S>> levels;
  PooledPairVars<S> pooled;
  ad::VarId z_bar_prime = ad::kNoVar;  // [teacher_dim]
  ad::VarId tau = ad::kNoVar;          // scalar score scale
};

/// Parameter ids bound to one tape pass.
template <typename S>
struct Binding {
  const std::vector<ad::VarId>* ids;
  const std::map<std::string, std::size_t>* index;
  ad::VarId operator()(const std::string& name) const {
    auto it = index->find(name);
    if (it == index->end()) throw ModelError("unknown parameter: " + name);
    return (*ids)[it->second];
  }
};

/// The GridCLIP detector: tiny CLIP-style backbone with attention pooling,
/// FPN fused with the adapted grid tokens, shared FCOS towers scoring grid
/// embeddings against the text bank, and the image-level alignment head.
template <typename S>
class GridClipModel {
 public:
  explicit GridClipModel(const ExperimentConfig& cfg) : cfg_(cfg) {
    cfg.validate();
    if (BackboneDims::kC5 % cfg.attn_heads != 0)
      throw ConfigError("attention head count must divide the C5 width");
    tokens_h_ = cfg.image_height / 32;
    tokens_w_ = cfg.image_width / 32;
    build_params();
  }

  const ExperimentConfig& config() const { return cfg_; }
  ParamStore<S>& params() { return params_; }
  const ParamStore<S>& params() const { return params_; }

  Binding<S> bind(const std::vector<ad::VarId>& ids) const { return Binding<S>{&ids, &index_}; }

  // -- backbone ------------------------------------------------------------

  BackboneOut<S> backbone_forward(ad::Tape<S>& t, Binding<S> p, ad::VarId image) const {
    const auto& shape = t.val(image).shape;
    if (shape.size() != 3 || shape[0] != 3) throw ModelError("backbone expects a [3,H,W] image");
    if (shape[1] < 32 || shape[2] < 32) throw ModelError("input image must be at least 32x32");
    if (shape[1] % 32 != 0 || shape[2] % 32 != 0)
      throw ModelError("input image must be padded to a multiple of 32");
    using namespace ad;
    VarId x = relu(t, conv2d(t, image, p("bb.conv1.w"), p("bb.conv1.b"), 2, 1));
    x = relu(t, conv2d(t, x, p("bb.conv2.w"), p("bb.conv2.b"), 2, 1));
    VarId c3 = relu(t, conv2d(t, x, p("bb.conv3.w"), p("bb.conv3.b"), 2, 1));
    VarId c4 = relu(t, conv2d(t, c3, p("bb.conv4.w"), p("bb.conv4.b"), 2, 1));
    VarId c5 = relu(t, conv2d(t, c4, p("bb.conv5.w"), p("bb.conv5.b"), 2, 1));
    return {c3, c4, c5};
  }

  // -- attention pooling (one pass produces both z_bar and z) ---------------

  PooledPairVars<S> attention_pool(ad::Tape<S>& t, Binding<S> p, ad::VarId c5) const {
    using namespace ad;
    const int d = t.val(c5).dim(0);
    const int h5 = t.val(c5).dim(1), w5 = t.val(c5).dim(2);
    if (t.val(p("pool.pos")).dim(0) != 1 + h5 * w5)
      throw ModelError("attention pool: positional embedding sized for a different grid");
    VarId cbar = global_avg_pool(t, c5);
    VarId tokens = concat_rows(t, {reshape(t, cbar, {1, d}), map_to_tokens(t, c5)});
    tokens = add(t, tokens, p("pool.pos"));

    VarId q = linear(t, tokens, p("pool.wq"), p("pool.bq"));
    VarId k = linear(t, tokens, p("pool.wk"), p("pool.bk"));
    VarId v = linear(t, tokens, p("pool.wv"), p("pool.bv"));
    const int heads = cfg_.attn_heads;
    const int dh = d / heads;
    const S inv_sqrt = S(1) / std::sqrt(static_cast<S>(dh));
    std::vector<VarId> head_out;
    for (int hd = 0; hd < heads; ++hd) {
      VarId qh = slice_cols(t, q, hd * dh, (hd + 1) * dh);
      VarId kh = slice_cols(t, k, hd * dh, (hd + 1) * dh);
      VarId vh = slice_cols(t, v, hd * dh, (hd + 1) * dh);
      VarId logits = affine(t, matmul(t, qh, transpose(t, kh)), inv_sqrt, S(0));
      VarId attn = softmax_rows(t, logits);
      head_out.push_back(matmul(t, attn, vh));
    }
    VarId merged = concat_cols(t, head_out);
    VarId out = linear(t, merged, p("pool.wo"), p("pool.bo"));
    VarId z_bar = reshape(t, slice_rows(t, out, 0, 1), {d});
    VarId z = tokens_to_map(t, slice_rows(t, out, 1, 1 + h5 * w5), h5, w5);
    return {z_bar, z};
  }

  // -- neck ------------------------------------------------------------------

  /// Three 3x3 convolutions (ReLU after the first two) shrinking D_attn to
  /// D_attn/4, mirroring the 1024 -> 256 adaptation.
  ad::VarId adapt_grid_feature(ad::Tape<S>& t, Binding<S> p, ad::VarId z) const {
    using namespace ad;
    VarId x = relu(t, conv2d(t, z, p("adapt.conv1.w"), p("adapt.conv1.b"), 1, 1));
    x = relu(t, conv2d(t, x, p("adapt.conv2.w"), p("adapt.conv2.b"), 1, 1));
    return conv2d(t, x, p("adapt.conv3.w"), p("adapt.conv3.b"), 1, 1);
  }

  /// FPN over (C3, C4, [z', C5]); the projected concatenation also feeds the
  /// P6/P7 branch (the C5 path, not P5).
  std::vector<LevelOut<S>> fpn_fuse(ad::Tape<S>& t, Binding<S> p, ad::VarId c3, ad::VarId c4,
                                    ad::VarId c5, ad::VarId zp) const {
    using namespace ad;
    if (t.val(zp).dim(1) != t.val(c5).dim(1) || t.val(zp).dim(2) != t.val(c5).dim(2))
      throw ModelError("fpn_fuse: z' and C5 must match spatially");
    VarId cat = concat_channels(t, zp, c5);
    VarId l3 = conv2d(t, c3, p("fpn.lat3.w"), p("fpn.lat3.b"), 1, 0);
    VarId l4 = conv2d(t, c4, p("fpn.lat4.w"), p("fpn.lat4.b"), 1, 0);
    VarId l5 = conv2d(t, cat, p("fpn.lat5.w"), p("fpn.lat5.b"), 1, 0);
    VarId m4 = add(t, l4, upsample_nearest2x(t, l5));
    VarId m3 = add(t, l3, upsample_nearest2x(t, m4));
    VarId p3 = conv2d(t, m3, p("fpn.smooth3.w"), p("fpn.smooth3.b"), 1, 1);
    VarId p4 = conv2d(t, m4, p("fpn.smooth4.w"), p("fpn.smooth4.b"), 1, 1);
    VarId p5 = conv2d(t, l5, p("fpn.smooth5.w"), p("fpn.smooth5.b"), 1, 1);
    VarId p6 = conv2d(t, l5, p("fpn.p6.w"), p("fpn.p6.b"), 2, 1);
    VarId p7 = conv2d(t, relu(t, p6), p("fpn.p7.w"), p("fpn.p7.b"), 2, 1);

    std::vector<LevelOut<S>> levels(kNumLevels);
    const VarId ids[kNumLevels] = {p3, p4, p5, p6, p7};
    for (int i = 0; i < kNumLevels; ++i) {
      levels[static_cast<std::size_t>(i)].pyramid = ids[i];
      levels[static_cast<std::size_t>(i)].h = t.val(ids[i]).dim(1);
      levels[static_cast<std::size_t>(i)].w = t.val(ids[i]).dim(2);
      levels[static_cast<std::size_t>(i)].stride = kLevelStrides[i];
    }
    return levels;
  }

  // -- heads (tower weights shared across levels) ----------------------------

  ad::VarId cls_tower_forward(ad::Tape<S>& t, Binding<S> p, ad::VarId pi) const {
    using namespace ad;
    VarId x = pi;
    for (int blk = 0; blk < 4; ++blk) {
      const std::string base = "cls.t" + std::to_string(blk);
      x = conv2d(t, x, p(base + ".w"), p(base + ".b"), 1, 1);
      x = group_norm(t, x, p(base + ".gn.g"), p(base + ".gn.b"), gn_groups_);
      x = relu(t, x);
    }
    return conv2d(t, x, p("cls.out.w"), p("cls.out.b"), 1, 1);
  }

  std::pair<ad::VarId, ad::VarId> box_tower_forward(ad::Tape<S>& t, Binding<S> p, ad::VarId pi,
                                                    int level) const {
    using namespace ad;
    VarId x = pi;
    for (int blk = 0; blk < 4; ++blk) {
      const std::string base = "box.t" + std::to_string(blk);
      x = conv2d(t, x, p(base + ".w"), p(base + ".b"), 1, 1);
      x = group_norm(t, x, p(base + ".gn.g"), p(base + ".gn.b"), gn_groups_);
      x = relu(t, x);
    }
    VarId raw = conv2d(t, x, p("box.reg.w"), p("box.reg.b"), 1, 1);
    VarId scaled = scale_by_scalar_var(t, raw, p("box.scale" + std::to_string(level)));
    VarId deltas = affine(t, exp_op(t, scaled), static_cast<S>(kLevelStrides[level]), S(0));
    VarId ctr = conv2d(t, x, p("box.ctr.w"), p("box.ctr.b"), 1, 1);
    return {deltas, ctr};
  }

  /// tau-scaled per-cell cosine similarities against every bank row.
  ad::VarId grid_cosine_scores(ad::Tape<S>& t, ad::VarId gi, const EmbeddingBank& bank,
                               ad::VarId tau) const {
    using namespace ad;
    if (bank.size() == 0) throw BankError("empty embedding bank");
    if (bank.dim != t.val(gi).dim(0)) throw ModelError("bank dimension does not match grid embeddings");
    const int h = t.val(gi).dim(1), w = t.val(gi).dim(2);
    VarId tokens = map_to_tokens(t, gi);                            // [HW, E]
    VarId norms = sqrt_op(t, sum_rows(t, mul(t, tokens, tokens)));  // [HW, 1]
    VarId floored = clamp_min(t, norms, S(1e-8));
    VarId unit = scale_rows(t, tokens, floored, true);
    Tensor<S> bmat({bank.size(), bank.dim});
    for (std::size_t i = 0; i < bmat.numel(); ++i) bmat[i] = static_cast<S>(bank.vectors[i]);
    VarId cos = matmul_const_bt(t, unit, std::move(bmat));  // [HW, K]
    VarId scaled = scale_by_scalar_var(t, cos, tau);
    return tokens_to_map(t, scaled, h, w);
  }

  /// Three linear layers with ReLU between, mapping z_bar into teacher space.
  ad::VarId image_align_head(ad::Tape<S>& t, Binding<S> p, ad::VarId z_bar) const {
    using namespace ad;
    const int d = t.val(z_bar).dim(0);
    VarId x = reshape(t, z_bar, {1, d});
    x = relu(t, linear(t, x, p("align.l1.w"), p("align.l1.b")));
    x = relu(t, linear(t, x, p("align.l2.w"), p("align.l2.b")));
    x = linear(t, x, p("align.l3.w"), p("align.l3.b"));
    return reshape(t, x, {cfg_.teacher_dim});
  }

  // -- full forward ----------------------------------------------------------

  ad::VarId tau_var(ad::Tape<S>& t, Binding<S> p) const {
    if (cfg_.learnable_tau) return p("head.tau");
    return t.constant(Tensor<S>({1}, {static_cast<S>(cfg_.tau)}));
  }

  ForwardOut<S> forward(ad::Tape<S>& t, Binding<S> p, ad::VarId image,
                        const EmbeddingBank& bank) const {
    ForwardOut<S> out;
    auto bb = backbone_forward(t, p, image);
    out.pooled = attention_pool(t, p, bb.c5);
    ad::VarId zp = adapt_grid_feature(t, p, out.pooled.z);
    out.levels = fpn_fuse(t, p, bb.c3, bb.c4, bb.c5, zp);
    out.tau = tau_var(t, p);
    for (auto& lvl : out.levels) {
      lvl.grid_embed = cls_tower_forward(t, p, lvl.pyramid);
      lvl.scores = grid_cosine_scores(t, lvl.grid_embed, bank, out.tau);
      auto [deltas, ctr] = box_tower_forward(t, p, lvl.pyramid, lvl.stride == 8 ? 0
                                             : lvl.stride == 16                 ? 1
                                             : lvl.stride == 32                 ? 2
                                             : lvl.stride == 64                 ? 3
                                                                                : 4);
      lvl.deltas = deltas;
      lvl.ctr_logits = ctr;
    }
    out.z_bar_prime = image_align_head(t, p, out.pooled.z_bar);
    return out;
  }

  /// Converts an (optionally augmented) annotated image into the network
  /// input: mean/std normalization then zero padding to the configured size.
  Tensor<S> to_input(const AnnotatedImage& img, bool already_normalized = false) const {
    if (img.width > cfg_.image_width || img.height > cfg_.image_height)
      throw ModelError("image exceeds the configured input size");
    Tensor<S> out({3, cfg_.image_height, cfg_.image_width});
    const std::size_t plane = static_cast<std::size_t>(img.width) * img.height;
    for (int c = 0; c < 3; ++c) {
      const double m = cfg_.pixel_mean[static_cast<std::size_t>(c)];
      const double sd = cfg_.pixel_std[static_cast<std::size_t>(c)];
      for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x) {
          const double v = img.pixels[static_cast<std::size_t>(c) * plane +
                                      static_cast<std::size_t>(y) * img.width + x];
          out.at3(c, y, x) = static_cast<S>(already_normalized ? v : (v - m) / sd);
        }
    }
    return out;
  }

 private:
  static int pick_gn_groups(int channels) {
    for (int g : {32, 16, 8, 4, 2})
      if (channels % g == 0) return g;
    return 1;
  }

  void add_conv(const std::string& name, ParamGroup group, int oc, int ic, int k, Rng& rng,
                double stddev = -1.0) {
    const double std_v = stddev > 0 ? stddev : std::sqrt(2.0 / (ic * k * k));
    params_.add(name + ".w", group,
                Tensor<S>::randn({oc, ic, k, k}, rng, static_cast<S>(std_v)));
    params_.add(name + ".b", group, Tensor<S>::zeros({oc}));
  }

  void add_linear(const std::string& name, ParamGroup group, int dout, int din, Rng& rng,
                  double stddev = -1.0) {
    const double std_v = stddev > 0 ? stddev : std::sqrt(2.0 / din);
    params_.add(name + ".w", group, Tensor<S>::randn({dout, din}, rng, static_cast<S>(std_v)));
    params_.add(name + ".b", group, Tensor<S>::zeros({dout}));
  }

  void build_params() {
    Rng rng(cfg_.seed, "model-init");
    const int d5 = BackboneDims::kC5;
    const int fpn = cfg_.fpn_channels;
    const int zp_ch = d5 / 4;
    gn_groups_ = pick_gn_groups(fpn);

    add_conv("bb.conv1", ParamGroup::Backbone, BackboneDims::kStem1, 3, 3, rng);
    add_conv("bb.conv2", ParamGroup::Backbone, BackboneDims::kStem2, BackboneDims::kStem1, 3, rng);
    add_conv("bb.conv3", ParamGroup::Backbone, BackboneDims::kC3, BackboneDims::kStem2, 3, rng);
    add_conv("bb.conv4", ParamGroup::Backbone, BackboneDims::kC4, BackboneDims::kC3, 3, rng);
    add_conv("bb.conv5", ParamGroup::Backbone, BackboneDims::kC5, BackboneDims::kC4, 3, rng);

    params_.add("pool.pos", ParamGroup::Backbone,
                Tensor<S>::zeros({1 + tokens_h_ * tokens_w_, d5}));
    const double attn_std = 1.0 / std::sqrt(static_cast<double>(d5));
    for (const char* nm : {"pool.wq", "pool.wk", "pool.wv", "pool.wo"}) {
      params_.add(std::string(nm), ParamGroup::Backbone,
                  Tensor<S>::randn({d5, d5}, rng, static_cast<S>(attn_std)));
      std::string bias = std::string("pool.b") + nm[6];
      params_.add(bias, ParamGroup::Backbone, Tensor<S>::zeros({d5}));
    }

    add_conv("adapt.conv1", ParamGroup::Head, 64, d5, 3, rng);
    add_conv("adapt.conv2", ParamGroup::Head, 64, 64, 3, rng);
    add_conv("adapt.conv3", ParamGroup::Head, zp_ch, 64, 3, rng);

    add_conv("fpn.lat3", ParamGroup::Head, fpn, BackboneDims::kC3, 1, rng);
    add_conv("fpn.lat4", ParamGroup::Head, fpn, BackboneDims::kC4, 1, rng);
    add_conv("fpn.lat5", ParamGroup::Head, fpn, zp_ch + d5, 1, rng);
    add_conv("fpn.smooth3", ParamGroup::Head, fpn, fpn, 3, rng);
    add_conv("fpn.smooth4", ParamGroup::Head, fpn, fpn, 3, rng);
    add_conv("fpn.smooth5", ParamGroup::Head, fpn, fpn, 3, rng);
    add_conv("fpn.p6", ParamGroup::Head, fpn, fpn, 3, rng);
    add_conv("fpn.p7", ParamGroup::Head, fpn, fpn, 3, rng);

    for (int blk = 0; blk < 4; ++blk) {
      add_conv("cls.t" + std::to_string(blk), ParamGroup::Head, fpn, fpn, 3, rng);
      params_.add("cls.t" + std::to_string(blk) + ".gn.g", ParamGroup::Head,
                  Tensor<S>::full({fpn}, S(1)));
      params_.add("cls.t" + std::to_string(blk) + ".gn.b", ParamGroup::Head, Tensor<S>::zeros({fpn}));
    }
    add_conv("cls.out", ParamGroup::Head, cfg_.embed_dim, fpn, 3, rng, 0.01);

    for (int blk = 0; blk < 4; ++blk) {
      add_conv("box.t" + std::to_string(blk), ParamGroup::Head, fpn, fpn, 3, rng);
      params_.add("box.t" + std::to_string(blk) + ".gn.g", ParamGroup::Head,
                  Tensor<S>::full({fpn}, S(1)));
      params_.add("box.t" + std::to_string(blk) + ".gn.b", ParamGroup::Head, Tensor<S>::zeros({fpn}));
    }
    add_conv("box.reg", ParamGroup::Head, 4, fpn, 3, rng, 0.01);
    add_conv("box.ctr", ParamGroup::Head, 1, fpn, 3, rng, 0.01);
    for (int i = 0; i < kNumLevels; ++i)
      params_.add("box.scale" + std::to_string(i), ParamGroup::Head, Tensor<S>::full({1}, S(1)));

    add_linear("align.l1", ParamGroup::Head, cfg_.teacher_dim, d5, rng);
    add_linear("align.l2", ParamGroup::Head, cfg_.teacher_dim, cfg_.teacher_dim, rng);
    add_linear("align.l3", ParamGroup::Head, cfg_.teacher_dim, cfg_.teacher_dim, rng,
               1.0 / std::sqrt(static_cast<double>(cfg_.teacher_dim)));

    if (cfg_.learnable_tau)
      params_.add("head.tau", ParamGroup::Head, Tensor<S>::full({1}, static_cast<S>(cfg_.tau_init)));

    for (std::size_t i = 0; i < params_.entries().size(); ++i)
      index_[params_.entries()[i].name] = i;
  }

  ExperimentConfig cfg_;
  ParamStore<S> params_;
  std::map<std::string, std::size_t> index_;
  int tokens_h_ = 0, tokens_w_ = 0;
  int gn_groups_ = 8;
};

}  // namespace gridclip
