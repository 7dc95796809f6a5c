#include <gtest/gtest.h>

#include "gridclip/postprocess.hpp"

using namespace gridclip;

namespace {

Detection det(double x1, double y1, double x2, double y2, double score, int cat = 0, int cell = 0) {
  Detection d;
  d.box = Box{x1, y1, x2, y2};
  d.score = score;
  d.category = cat;
  d.cell = cell;
  return d;
}

// Exhaustive suppression oracle: a candidate survives iff no higher-ranked
// surviving candidate overlaps it above the threshold. Computed by repeated
// full scans, independent of the greedy implementation.
std::vector<Detection> nms_oracle(std::vector<Detection> cands, double thr) {
  std::sort(cands.begin(), cands.end(), [](const Detection& a, const Detection& b) {
    if (a.score != b.score) return a.score > b.score;
    if (a.category != b.category) return a.category < b.category;
    if (a.level != b.level) return a.level < b.level;
    return a.cell < b.cell;
  });
  std::vector<Detection> out;
  std::vector<int> state(cands.size(), 0);  // 0 unknown, 1 kept, -1 gone
  for (std::size_t i = 0; i < cands.size(); ++i) {
    if (state[i] != 0) continue;
    state[i] = 1;
    out.push_back(cands[i]);
    for (std::size_t j = 0; j < cands.size(); ++j)
      if (state[j] == 0 && iou(cands[i].box, cands[j].box) > thr) state[j] = -1;
  }
  return out;
}

}  // namespace

TEST(DecodeBoxes, ArithmeticAndClamping) {
  Box b = decode_box(20, 20, 5, 5, 10, 10, 128, 128);
  EXPECT_DOUBLE_EQ(b.x1, 15);
  EXPECT_DOUBLE_EQ(b.y1, 15);
  EXPECT_DOUBLE_EQ(b.x2, 30);
  EXPECT_DOUBLE_EQ(b.y2, 30);

  Box zero = decode_box(20, 20, 0, 0, 0, 0, 128, 128);
  EXPECT_DOUBLE_EQ(zero.area(), 0.0);

  Box clamped = decode_box(4, 4, 100, 100, 500, 500, 128, 128);
  EXPECT_DOUBLE_EQ(clamped.x1, 0);
  EXPECT_DOUBLE_EQ(clamped.y1, 0);
  EXPECT_DOUBLE_EQ(clamped.x2, 128);
  EXPECT_DOUBLE_EQ(clamped.y2, 128);
}

TEST(ScoreCandidates, SigmoidProduct) {
  EXPECT_DOUBLE_EQ(candidate_score(0.0, 0.0, true), 0.25);
  EXPECT_NEAR(candidate_score(3.0, -40.0, true), 0.0, 1e-15);  // centerness kills it
  Rng rng(1);
  for (int i = 0; i < 100; ++i) {
    const double s = candidate_score(rng.normal(0, 5), rng.normal(0, 5), true);
    EXPECT_GT(s, 0.0);
    EXPECT_LT(s, 1.0);
  }
  EXPECT_DOUBLE_EQ(candidate_score(0.0, -100.0, false), 0.5);  // flag disables centerness
}

TEST(Iou, UnitValues) {
  EXPECT_DOUBLE_EQ(iou(Box{0, 0, 2, 2}, Box{0, 0, 2, 2}), 1.0);
  EXPECT_DOUBLE_EQ(iou(Box{0, 0, 1, 1}, Box{5, 5, 6, 6}), 0.0);
  EXPECT_NEAR(iou(Box{0, 0, 2, 2}, Box{1, 1, 3, 3}), 1.0 / 7.0, 1e-12);
  // zero-area boxes have IoU 0 by convention
  EXPECT_DOUBLE_EQ(iou(Box{1, 1, 1, 1}, Box{1, 1, 1, 1}), 0.0);
}

TEST(Iou, SymmetricAndBounded) {
  Rng rng(7);
  for (int i = 0; i < 200; ++i) {
    Box a{rng.uniform(0, 50), rng.uniform(0, 50), 0, 0};
    a.x2 = a.x1 + rng.uniform(1, 40);
    a.y2 = a.y1 + rng.uniform(1, 40);
    Box b{rng.uniform(0, 50), rng.uniform(0, 50), 0, 0};
    b.x2 = b.x1 + rng.uniform(1, 40);
    b.y2 = b.y1 + rng.uniform(1, 40);
    const double ab = iou(a, b);
    EXPECT_DOUBLE_EQ(ab, iou(b, a));
    EXPECT_GE(ab, 0.0);
    EXPECT_LE(ab, 1.0);
  }
}

TEST(Nms, WorkedExample) {
  // A: 0.9, B: 0.8 overlapping A at IoU 0.6, C: 0.7 disjoint; threshold 0.5
  // -> {A, C}
  std::vector<Detection> cands;
  cands.push_back(det(0, 0, 10, 10, 0.9));
  // B overlaps A with IoU = 0.6: inter/union = 0.6 -> inter = 75 over union 125
  // use A=(0,0,10,10), B=(2.5,0,12.5,10): inter 75, union 125 -> 0.6
  cands.push_back(det(2.5, 0, 12.5, 10, 0.8));
  cands.push_back(det(50, 50, 60, 60, 0.7));
  ASSERT_NEAR(iou(cands[0].box, cands[1].box), 0.6, 1e-12);
  auto kept = nms_per_class(cands, 0.5);
  ASSERT_EQ(kept.size(), 2u);
  EXPECT_DOUBLE_EQ(kept[0].score, 0.9);
  EXPECT_DOUBLE_EQ(kept[1].score, 0.7);
}

TEST(Nms, SingleAndEmpty) {
  auto one = nms_per_class({det(0, 0, 5, 5, 0.3)}, 0.5);
  ASSERT_EQ(one.size(), 1u);
  EXPECT_TRUE(nms_per_class({}, 0.5).empty());
}

TEST(Nms, EqualsExhaustiveOracleOn200RandomInstances) {
  Rng rng(99);
  for (int inst = 0; inst < 200; ++inst) {
    const int n = 1 + static_cast<int>(rng.index(50));
    std::vector<Detection> cands;
    for (int i = 0; i < n; ++i) {
      const double x1 = rng.uniform(0, 80), y1 = rng.uniform(0, 80);
      Detection d = det(x1, y1, x1 + rng.uniform(2, 40), y1 + rng.uniform(2, 40),
                        rng.uniform(0.01, 1.0), 0, i);
      cands.push_back(d);
    }
    const double thr = rng.uniform(0.2, 0.8);
    auto greedy = nms_per_class(cands, thr);
    auto oracle = nms_oracle(cands, thr);
    ASSERT_EQ(greedy.size(), oracle.size()) << "instance " << inst;
    for (std::size_t i = 0; i < greedy.size(); ++i) {
      EXPECT_DOUBLE_EQ(greedy[i].score, oracle[i].score);
      EXPECT_DOUBLE_EQ(greedy[i].box.x1, oracle[i].box.x1);
    }
    // no two survivors overlap above the threshold
    for (std::size_t i = 0; i < greedy.size(); ++i)
      for (std::size_t j = i + 1; j < greedy.size(); ++j)
        EXPECT_LE(iou(greedy[i].box, greedy[j].box), thr + 1e-12);
  }
}

TEST(Finalize, ThresholdCapAndDeterminism) {
  PostprocessSettings s;
  s.score_threshold = 0.05;
  s.nms_iou = 0.5;
  s.max_detections = 300;

  {  // everything below threshold -> empty
    std::vector<std::vector<Detection>> lv(1);
    for (int i = 0; i < 20; ++i) lv[0].push_back(det(i * 3, 0, i * 3 + 2, 2, 0.04, i % 3, i));
    auto out = finalize("img", lv, s, 3);
    EXPECT_TRUE(out.detections.empty());
  }
  {  // 400 disjoint survivors -> exactly 300 kept, the top-scored
    std::vector<std::vector<Detection>> lv(1);
    for (int i = 0; i < 400; ++i) {
      const double x = (i % 20) * 6.0, y = (i / 20) * 6.0;
      lv[0].push_back(det(x, y, x + 5, y + 5, 0.1 + 0.002 * i, 0, i));
    }
    auto out = finalize("img", lv, s, 1);
    ASSERT_EQ(out.detections.size(), 300u);
    for (std::size_t i = 1; i < out.detections.size(); ++i)
      EXPECT_GE(out.detections[i - 1].score, out.detections[i].score);
    EXPECT_NEAR(out.detections[0].score, 0.1 + 0.002 * 399, 1e-12);
    EXPECT_NEAR(out.detections.back().score, 0.1 + 0.002 * 100, 1e-12);
  }
  {  // score ties break by category then spatial index
    std::vector<std::vector<Detection>> lv(1);
    lv[0].push_back(det(0, 0, 3, 3, 0.5, 2, 7));
    lv[0].push_back(det(10, 10, 13, 13, 0.5, 1, 9));
    lv[0].push_back(det(20, 20, 23, 23, 0.5, 1, 4));
    auto out = finalize("img", lv, s, 3);
    ASSERT_EQ(out.detections.size(), 3u);
    EXPECT_EQ(out.detections[0].category, 1);
    EXPECT_EQ(out.detections[0].cell, 4);
    EXPECT_EQ(out.detections[1].category, 1);
    EXPECT_EQ(out.detections[1].cell, 9);
    EXPECT_EQ(out.detections[2].category, 2);
  }
}

TEST(Finalize, PreNmsTopkBoundsPerLevelWork) {
  PostprocessSettings s;
  s.score_threshold = 0.0;
  s.pre_nms_topk = 10;
  s.max_detections = 1000;
  std::vector<std::vector<Detection>> lv(2);
  for (int i = 0; i < 50; ++i) {
    lv[0].push_back(det(i * 2, 0, i * 2 + 1.5, 2, 0.01 * (i + 1), 0, i));
    lv[1].push_back(det(i * 2, 10, i * 2 + 1.5, 12, 0.02 * (i + 1), 0, i));
  }
  auto out = finalize("img", lv, s, 1);
  EXPECT_EQ(out.detections.size(), 20u);  // 10 per level survive the top-k
}

TEST(Finalize, NmsSubsetInvariant) {
  Rng rng(123);
  PostprocessSettings s;
  s.score_threshold = 0.05;
  for (int inst = 0; inst < 20; ++inst) {
    std::vector<std::vector<Detection>> lv(1);
    const int n = 30;
    for (int i = 0; i < n; ++i) {
      const double x1 = rng.uniform(0, 60), y1 = rng.uniform(0, 60);
      lv[0].push_back(det(x1, y1, x1 + rng.uniform(2, 30), y1 + rng.uniform(2, 30),
                          rng.uniform(0.0, 1.0), static_cast<int>(rng.index(3)), i));
    }
    auto input = lv[0];
    auto out = finalize("img", lv, s, 3);
    for (const auto& d : out.detections) {
      EXPECT_GE(d.score, s.score_threshold);
      bool found = false;
      for (const auto& in : input)
        if (in.cell == d.cell && in.category == d.category && in.score == d.score) found = true;
      EXPECT_TRUE(found);  // survivors are a subset of the input
    }
  }
}
