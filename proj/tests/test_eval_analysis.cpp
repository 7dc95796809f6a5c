#include <gtest/gtest.h>

#include "gridclip/analysis.hpp"
#include "gridclip/eval.hpp"

using namespace gridclip;

namespace {

// Independent AP oracle: greedy matching restated from scratch, followed by
// direct evaluation of the envelope integral (quadratic scan, no shared
// code with the implementation).
double ap_oracle(std::vector<ScoredBox> dets, const std::vector<std::vector<Box>>& gt,
                 double thr) {
  int n_gt = 0;
  for (const auto& g : gt) n_gt += static_cast<int>(g.size());
  if (n_gt == 0) return 0.0;
  std::stable_sort(dets.begin(), dets.end(),
                   [](const ScoredBox& a, const ScoredBox& b) { return a.score > b.score; });
  std::vector<std::vector<bool>> taken(gt.size());
  for (std::size_t i = 0; i < gt.size(); ++i) taken[i].assign(gt[i].size(), false);
  std::vector<int> flags;
  for (const auto& d : dets) {
    int pick = -1;
    double best = -1;
    for (std::size_t g = 0; g < gt[static_cast<std::size_t>(d.image)].size(); ++g) {
      if (taken[static_cast<std::size_t>(d.image)][g]) continue;
      const double v = iou(d.box, gt[static_cast<std::size_t>(d.image)][g]);
      if (v >= thr && v > best) {
        best = v;
        pick = static_cast<int>(g);
      }
    }
    if (pick >= 0) {
      taken[static_cast<std::size_t>(d.image)][static_cast<std::size_t>(pick)] = true;
      flags.push_back(1);
    } else {
      flags.push_back(0);
    }
  }
  // direct envelope integral: for every TP position, the envelope height is
  // the best precision at any rank with recall >= this rank's recall
  double ap = 0.0;
  int tp = 0;
  for (std::size_t i = 0; i < flags.size(); ++i) {
    if (!flags[i]) continue;
    ++tp;
    double env = 0.0;
    int tp2 = 0;
    for (std::size_t j = 0; j < flags.size(); ++j) {
      if (flags[j]) ++tp2;
      if (tp2 >= tp) env = std::max(env, static_cast<double>(tp2) / static_cast<double>(j + 1));
    }
    ap += env / n_gt;
  }
  return ap;
}

}  // namespace

TEST(ComputeAp, WorkedExamples) {
  // one GT, one detection with IoU 0.9 at threshold 0.5 -> AP 1.0
  std::vector<std::vector<Box>> gt = {{Box{0, 0, 10, 10}}};
  std::vector<ScoredBox> dets = {{0, 0.9, Box{0, 1, 10, 10}}};  // IoU 0.9
  ASSERT_NEAR(iou(dets[0].box, gt[0][0]), 0.9, 1e-12);
  EXPECT_DOUBLE_EQ(average_precision(dets, gt, 0.5), 1.0);

  // no detections -> AP 0
  EXPECT_DOUBLE_EQ(average_precision({}, gt, 0.5), 0.0);

  // FP scored above a TP: envelope precision 0.5 at recall 1 -> AP 0.5
  std::vector<ScoredBox> two = {{0, 0.95, Box{50, 50, 60, 60}}, {0, 0.90, Box{0, 0, 10, 10}}};
  EXPECT_DOUBLE_EQ(average_precision(two, gt, 0.5), 0.5);
}

TEST(ComputeAp, AgreesWithOracleOn100RandomScenes) {
  Rng rng(404);
  for (int scene = 0; scene < 100; ++scene) {
    const int n_images = 1 + static_cast<int>(rng.index(3));
    std::vector<std::vector<Box>> gt(static_cast<std::size_t>(n_images));
    for (auto& g : gt) {
      const int n = static_cast<int>(rng.index(6));  // up to 5 GT
      for (int i = 0; i < n; ++i) {
        const double x1 = rng.uniform(0, 50), y1 = rng.uniform(0, 50);
        g.push_back(Box{x1, y1, x1 + rng.uniform(3, 30), y1 + rng.uniform(3, 30)});
      }
    }
    std::vector<ScoredBox> dets;
    const int nd = static_cast<int>(rng.index(9));  // up to 8 detections
    for (int i = 0; i < nd; ++i) {
      ScoredBox d;
      d.image = static_cast<int>(rng.index(static_cast<std::uint64_t>(n_images)));
      d.score = rng.uniform(0, 1);
      if (!gt[static_cast<std::size_t>(d.image)].empty() && rng.bernoulli(0.6)) {
        const Box& base =
            gt[static_cast<std::size_t>(d.image)][rng.index(gt[static_cast<std::size_t>(d.image)].size())];
        d.box = Box{base.x1 + rng.uniform(-3, 3), base.y1 + rng.uniform(-3, 3),
                    base.x2 + rng.uniform(-3, 3), base.y2 + rng.uniform(-3, 3)};
        if (!d.box.valid()) d.box = base;
      } else {
        const double x1 = rng.uniform(0, 50), y1 = rng.uniform(0, 50);
        d.box = Box{x1, y1, x1 + rng.uniform(3, 30), y1 + rng.uniform(3, 30)};
      }
      dets.push_back(d);
    }
    for (double thr : {0.5, 0.75}) {
      const double got = average_precision(dets, gt, thr);
      const double want = ap_oracle(dets, gt, thr);
      ASSERT_NEAR(got, want, 1e-12) << "scene " << scene << " thr " << thr;
    }
  }
}

TEST(BucketAp, PartitionAndAggregates) {
  CorpusManifest m;
  for (auto [name, freq] : std::initializer_list<std::pair<const char*, int>>{
           {"r1", 5}, {"c1", 50}, {"f1", 500}, {"c2", 30}}) {
    CategoryInfo info;
    info.name = name;
    info.frequency = freq;
    info.bucket = bucket_for(freq);
    info.split = info.bucket == Bucket::Rare ? Split::Novel : Split::Base;
    m.categories.push_back(info);
  }
  std::map<std::string, double> ap = {{"r1", 0.2}, {"c1", 0.4}, {"f1", 0.8}, {"c2", 0.6}};
  auto b = bucket_ap(ap, m);
  EXPECT_DOUBLE_EQ(*b.ap_r, 0.2);
  EXPECT_DOUBLE_EQ(*b.ap_c, 0.5);
  EXPECT_DOUBLE_EQ(*b.ap_f, 0.8);
  EXPECT_DOUBLE_EQ(*b.ap, 0.5);

  // all categories equal value -> every aggregate equals it
  std::map<std::string, double> flat = {{"r1", 0.3}, {"c1", 0.3}, {"f1", 0.3}, {"c2", 0.3}};
  auto fb = bucket_ap(flat, m);
  EXPECT_DOUBLE_EQ(*fb.ap_r, 0.3);
  EXPECT_DOUBLE_EQ(*fb.ap_c, 0.3);
  EXPECT_DOUBLE_EQ(*fb.ap_f, 0.3);

  // removing a frequent category leaves ap_r bitwise unchanged
  std::map<std::string, double> no_f = {{"r1", 0.2}, {"c1", 0.4}, {"c2", 0.6}};
  auto nb = bucket_ap(no_f, m);
  EXPECT_EQ(*nb.ap_r, *b.ap_r);
  EXPECT_FALSE(nb.ap_f.has_value());  // empty bucket reported absent
}

TEST(RcAtK, WorkedExampleAndMonotonicity) {
  // categories a,b,c,d with one-hot embeddings; image embedding ranks
  // a first and b third
  std::vector<std::vector<double>> cats = {
      {1, 0, 0, 0}, {0, 1, 0, 0}, {0, 0, 1, 0}, {0, 0, 0, 1}};
  std::vector<std::string> names = {"a", "b", "c", "d"};
  AnnotatedImage img;
  img.width = img.height = 8;
  img.pixels.assign(8 * 8 * 3, 0.f);
  img.boxes = {Box{0, 0, 2, 2}, Box{3, 3, 5, 5}};
  img.labels = {"a", "b"};
  std::vector<std::vector<double>> embs = {{1.0, 0.2, 0.5, 0.1}};
  auto rc = rc_at_k(embs, cats, names, {img}, {1, 3, 4});
  EXPECT_DOUBLE_EQ(rc.recall[0], 0.5);
  EXPECT_DOUBLE_EQ(rc.recall[1], 1.0);
  EXPECT_DOUBLE_EQ(rc.recall[2], 1.0);  // k >= K -> full recall
  EXPECT_EQ(rc.images_used, 1);

  // monotone non-decreasing in k on random inputs
  Rng rng(31);
  std::vector<std::vector<double>> rnd_cats;
  for (int i = 0; i < 12; ++i) {
    std::vector<double> v(16);
    for (auto& x : v) x = rng.normal();
    rnd_cats.push_back(v);
  }
  std::vector<std::string> rnd_names;
  for (int i = 0; i < 12; ++i) rnd_names.push_back("cat" + std::to_string(i));
  std::vector<AnnotatedImage> imgs;
  std::vector<std::vector<double>> rnd_embs;
  for (int i = 0; i < 10; ++i) {
    AnnotatedImage im;
    im.width = im.height = 8;
    im.pixels.assign(8 * 8 * 3, 0.f);
    const int n = 1 + static_cast<int>(rng.index(4));
    for (int j = 0; j < n; ++j) {
      im.boxes.push_back(Box{0, 0, 2, 2});
      im.labels.push_back(rnd_names[rng.index(12)]);
    }
    imgs.push_back(im);
    std::vector<double> e(16);
    for (auto& x : e) x = rng.normal();
    rnd_embs.push_back(e);
  }
  std::vector<int> ks = {1, 2, 3, 5, 8, 12, 300};
  auto r = rc_at_k(rnd_embs, rnd_cats, rnd_names, imgs, ks);
  for (std::size_t i = 1; i < r.recall.size(); ++i) EXPECT_GE(r.recall[i], r.recall[i - 1] - 1e-12);
  EXPECT_DOUBLE_EQ(r.recall.back(), 1.0);
}

TEST(RcAtK, ImagesWithoutGroundTruthSkippedAndCounted) {
  std::vector<std::vector<double>> cats = {{1, 0}, {0, 1}};
  std::vector<std::string> names = {"a", "b"};
  AnnotatedImage with_gt, without_gt;
  with_gt.width = with_gt.height = 8;
  with_gt.pixels.assign(8 * 8 * 3, 0.f);
  with_gt.boxes = {Box{0, 0, 2, 2}};
  with_gt.labels = {"a"};
  without_gt = with_gt;
  without_gt.boxes.clear();
  without_gt.labels.clear();
  auto rc = rc_at_k({{1.0, 0.0}, {1.0, 0.0}}, cats, names, {with_gt, without_gt}, {1});
  EXPECT_EQ(rc.images_used, 1);
  EXPECT_EQ(rc.images_skipped, 1);
  EXPECT_DOUBLE_EQ(rc.recall[0], 1.0);
}

TEST(Histogram, CountingAndNormalization) {
  auto make = [](std::vector<std::vector<std::string>> label_sets) {
    std::vector<AnnotatedImage> imgs;
    for (auto& ls : label_sets) {
      AnnotatedImage im;
      im.width = im.height = 8;
      im.pixels.assign(8 * 8 * 3, 0.f);
      for (auto& l : ls) {
        im.boxes.push_back(Box{0, 0, 2, 2});
        im.labels.push_back(l);
      }
      imgs.push_back(im);
    }
    return imgs;
  };
  auto h = category_count_histogram(make({{"a"}, {"b"}, {"a", "b"}}));
  ASSERT_EQ(h.count.size(), 2u);
  EXPECT_EQ(h.count[0], 1);
  EXPECT_NEAR(h.fraction[0], 2.0 / 3.0, 1e-12);
  EXPECT_EQ(h.count[1], 2);
  EXPECT_NEAR(h.fraction[1], 1.0 / 3.0, 1e-12);

  auto single = category_count_histogram(make({{"a", "c"}}));
  ASSERT_EQ(single.count.size(), 1u);
  EXPECT_DOUBLE_EQ(single.fraction[0], 1.0);

  double sum = 0;
  for (double f : h.fraction) sum += f;
  EXPECT_NEAR(sum, 1.0, 1e-12);
}

TEST(MovingAverage, ConstantImpulseAndEdges) {
  std::vector<double> constant(40, 0.7);
  auto smooth = moving_average_curve(constant);
  for (double v : smooth) EXPECT_DOUBLE_EQ(v, 0.7);

  std::vector<double> impulse(60, 0.0);
  impulse[30] = 21.0;
  auto s = moving_average_curve(impulse);  // default window [-10, 10]
  for (int i = 0; i < 60; ++i) {
    if (i >= 20 && i <= 40) EXPECT_DOUBLE_EQ(s[static_cast<std::size_t>(i)], 1.0);
    else EXPECT_DOUBLE_EQ(s[static_cast<std::size_t>(i)], 0.0);
  }

  // truncated edge window: first element of an increasing ramp averages
  // indices 0..10 only
  std::vector<double> ramp;
  for (int i = 0; i < 30; ++i) ramp.push_back(i);
  auto r = moving_average_curve(ramp);
  EXPECT_DOUBLE_EQ(r[0], 5.0);  // mean of 0..10

  EXPECT_TRUE(moving_average_curve({}).empty());
}

TEST(CsvEmitters, RoundTripBitwise) {
  Rng rng(55);
  RcAtKResult rc;
  rc.k_values = {10, 100, 300};
  rc.recall = {rng.uniform(0, 1), rng.uniform(0, 1), 1.0 / 3.0};
  const std::string rc_text = emit_rc_csv(rc);
  auto rc_back = parse_rc_csv(rc_text);
  EXPECT_EQ(emit_rc_csv(rc_back), rc_text);
  for (std::size_t i = 0; i < rc.recall.size(); ++i)
    EXPECT_EQ(rc_back.recall[i], rc.recall[i]);  // bitwise

  CategoryHistogram h;
  h.count = {1, 2, 3};
  h.fraction = {1.0 / 7.0, 2.0 / 7.0, 4.0 / 7.0};
  const std::string h_text = emit_histogram_csv(h);
  auto h_back = parse_histogram_csv(h_text);
  EXPECT_EQ(emit_histogram_csv(h_back), h_text);
  for (std::size_t i = 0; i < h.fraction.size(); ++i) EXPECT_EQ(h_back.fraction[i], h.fraction[i]);

  ApCurve c;
  c.category = {"a", "b", "c"};
  c.frequency = {3, 17, 220};
  c.ap = {rng.uniform(0, 1), rng.uniform(0, 1), rng.uniform(0, 1)};
  c.smoothed = moving_average_curve(c.ap);
  const std::string c_text = emit_curve_csv(c);
  auto c_back = parse_curve_csv(c_text);
  EXPECT_EQ(emit_curve_csv(c_back), c_text);
  for (std::size_t i = 0; i < c.ap.size(); ++i) {
    EXPECT_EQ(c_back.ap[i], c.ap[i]);
    EXPECT_EQ(c_back.smoothed[i], c.smoothed[i]);
  }
}

TEST(CurveByFrequency, SortsAscendingWithNameTies) {
  CorpusManifest m;
  for (auto [name, freq] :
       std::initializer_list<std::pair<const char*, int>>{{"zeta", 30}, {"alpha", 30}, {"mid", 5}}) {
    CategoryInfo info;
    info.name = name;
    info.frequency = freq;
    info.bucket = bucket_for(freq);
    m.categories.push_back(info);
  }
  std::map<std::string, double> ap = {{"zeta", 0.1}, {"alpha", 0.2}, {"mid", 0.3}};
  auto curve = ap_by_frequency_curve(ap, m);
  ASSERT_EQ(curve.category.size(), 3u);
  EXPECT_EQ(curve.category[0], "mid");
  EXPECT_EQ(curve.category[1], "alpha");  // frequency tie broken by name
  EXPECT_EQ(curve.category[2], "zeta");
}

// ---------------------------------------------------------------------------
// Evaluation protocols over a (random-weights) model
// ---------------------------------------------------------------------------

namespace {

struct ProtocolFixture {
  ExperimentConfig cfg;
  Dataset ds;
  EmbeddingBank bank;
  std::unique_ptr<GridClipModel<float>> model;

  ProtocolFixture() {
    cfg.image_height = cfg.image_width = 64;
    cfg.seed = 9;
    ds = generate_dataset(9, 5, 240, 1.0, 64);
    ds.images.resize(10);  // protocol checks only need a few images
    std::vector<std::string> names;
    for (const auto& c : ds.manifest.categories) names.push_back(c.name);
    bank = build_synthetic_bank(ds.manifest, names, cfg.seed, cfg.embed_dim, TextMode::Attribute,
                                cfg.prompt_templates);
    model = std::make_unique<GridClipModel<float>>(cfg);
  }
};

}  // namespace

TEST(Protocols, TransferWithIdentityBankMatchesClosedSetAtSameNms) {
  ProtocolFixture fx;
  auto settings = PostprocessSettings::from_config(fx.cfg);
  settings.nms_iou = 0.6;
  auto closed = evaluate(*fx.model, fx.bank, fx.ds, settings, "transfer");
  auto transfer = transfer_eval(*fx.model, fx.bank, fx.ds, PostprocessSettings::from_config(fx.cfg));
  EXPECT_EQ(closed.to_json().dump(), transfer.to_json().dump());
  EXPECT_DOUBLE_EQ(transfer.nms_iou, 0.6);
  EXPECT_TRUE(transfer.ap50.has_value());
  EXPECT_TRUE(transfer.ap75.has_value());
}

TEST(Protocols, OpenSetWithEmptyNovelListMatchesClosedSet) {
  ProtocolFixture fx;
  auto settings = PostprocessSettings::from_config(fx.cfg);
  auto closed = evaluate(*fx.model, fx.bank, fx.ds, settings, "open");
  auto open = open_set_eval(*fx.model, fx.bank, {}, fx.ds, settings, fx.cfg.seed,
                            TextMode::Attribute, fx.cfg.prompt_templates);
  EXPECT_EQ(closed.to_json().dump(), open.to_json().dump());
}

TEST(Protocols, ReportEchoesSettingsAndBankHash) {
  ProtocolFixture fx;
  auto settings = PostprocessSettings::from_config(fx.cfg);
  auto report = evaluate(*fx.model, fx.bank, fx.ds, settings);
  EXPECT_EQ(report.bank_hash, fx.bank.content_hash());
  EXPECT_DOUBLE_EQ(report.score_threshold, 0.05);
  EXPECT_EQ(report.max_detections, 300);
  EXPECT_EQ(report.mode, "closed");
  // json serialization is deterministic
  EXPECT_EQ(report.to_json().dump(), report.to_json().dump());
}

TEST(Protocols, InferenceRespectsCapAndThreshold) {
  ProtocolFixture fx;
  auto settings = PostprocessSettings::from_config(fx.cfg);
  auto detections = run_inference(*fx.model, fx.bank, fx.ds.images, settings);
  for (const auto& per_image : detections) {
    EXPECT_LE(per_image.detections.size(), 300u);
    for (const auto& d : per_image.detections) EXPECT_GE(d.score, 0.05);
  }
}
