#include <gtest/gtest.h>

#include <sstream>

#include "gridclip/config.hpp"
#include "gridclip/schedule.hpp"

using namespace gridclip;

namespace {

ExperimentConfig paper_schedule_config() {
  ExperimentConfig c;
  c.epochs = 24;
  c.lr_decay_epochs = {16, 22};
  c.lr_decay_factor = 0.1;
  c.warmup_iters = 500;
  c.warmup_start_factor = 0.01;
  return c;
}

}  // namespace

TEST(LrSchedule, DecayAtEpochBoundaries) {
  auto cfg = paper_schedule_config();
  const std::int64_t total = 24 * 1000;
  auto sched = build_lr_schedule(cfg, total);
  // epoch 17 of 24 with decay at {16, 22} -> one decay applied
  EXPECT_DOUBLE_EQ(sched(17 * 1000 + 3), 0.1);
  EXPECT_DOUBLE_EQ(sched(15 * 1000 + 999), 1.0);
  EXPECT_DOUBLE_EQ(sched(16 * 1000), 0.1);
  EXPECT_NEAR(sched(23 * 1000), 0.01, 1e-15);
}

TEST(LrSchedule, WarmupEndpointsAndMidpoint) {
  auto cfg = paper_schedule_config();
  auto sched = build_lr_schedule(cfg, 24 * 1000);
  EXPECT_DOUBLE_EQ(sched(0), 0.01);
  EXPECT_DOUBLE_EQ(sched(500), 1.0);
  EXPECT_DOUBLE_EQ(sched(250), 0.505);  // linear interpolation
}

TEST(LrSchedule, NonIncreasingAfterWarmupAndPiecewiseConstant) {
  auto cfg = paper_schedule_config();
  const std::int64_t total = 24 * 100;
  cfg.warmup_iters = 50;
  auto sched = build_lr_schedule(cfg, total);
  double prev = sched(cfg.warmup_iters);
  int changes = 0;
  for (std::int64_t i = cfg.warmup_iters + 1; i < total; ++i) {
    const double m = sched(i);
    EXPECT_LE(m, prev);
    if (m != prev) ++changes;
    prev = m;
  }
  EXPECT_EQ(changes, 2);  // one step per decay epoch
}

TEST(LrSchedule, DecayEpochBeyondEpochsIsConfigError) {
  auto cfg = paper_schedule_config();
  cfg.lr_decay_epochs = {16, 24};
  EXPECT_THROW(build_lr_schedule(cfg, 24 * 100), ConfigError);
}

TEST(LrSchedule, TotalItersMustCoverWarmup) {
  auto cfg = paper_schedule_config();
  EXPECT_THROW(build_lr_schedule(cfg, 100), ConfigError);
}

TEST(ClipGradients, AtNormBoundaryUnchanged) {
  std::vector<double> g = {0.06, 0.08};  // norm exactly 0.1
  auto out = clip_gradients(g, 0.1);
  EXPECT_DOUBLE_EQ(out[0], 0.06);
  EXPECT_DOUBLE_EQ(out[1], 0.08);
}

TEST(ClipGradients, ScalesDownToMaxNorm) {
  std::vector<double> g = {0.12, 0.16};  // norm 0.2
  auto out = clip_gradients(g, 0.1);
  EXPECT_NEAR(out[0], 0.06, 1e-12);
  EXPECT_NEAR(out[1], 0.08, 1e-12);
}

TEST(ClipGradients, ZeroVectorPassesThrough) {
  std::vector<double> g = {0.0, 0.0, 0.0};
  auto out = clip_gradients(g, 0.1);
  for (double v : out) EXPECT_DOUBLE_EQ(v, 0.0);
}

TEST(ClipGradients, IdempotentAndNeverIncreasesNorm) {
  Rng rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> g(17);
    for (auto& v : g) v = rng.normal();
    const double before = l2_norm(g);
    auto once = clip_gradients(g, 0.1);
    auto twice = clip_gradients(once, 0.1);
    EXPECT_LE(l2_norm(once), std::max(0.1, before) + 1e-12);
    for (std::size_t i = 0; i < g.size(); ++i) EXPECT_DOUBLE_EQ(once[i], twice[i]);
  }
}

TEST(Config, RoundTripThroughText) {
  ExperimentConfig c;
  c.seed = 42;
  c.epochs = 7;
  c.lr_decay_epochs = {3, 5};
  c.resize_sizes = {{213, 128}, {213, 102}};
  c.learnable_tau = true;
  c.text_mode = TextMode::Hash;
  std::stringstream ss;
  save_config(c, ss);
  auto back = parse_config(ss);
  EXPECT_EQ(back.seed, 42u);
  EXPECT_EQ(back.epochs, 7);
  EXPECT_EQ(back.lr_decay_epochs, (std::vector<int>{3, 5}));
  EXPECT_EQ(back.resize_sizes.size(), 2u);
  EXPECT_TRUE(back.learnable_tau);
  EXPECT_TRUE(back.text_mode == TextMode::Hash);
  EXPECT_EQ(back.prompt_templates.size(), 7u);
}

TEST(Config, InvariantViolationsRejected) {
  ExperimentConfig c;
  c.score_threshold = 1.0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = ExperimentConfig{};
  c.nms_iou = 0.0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = ExperimentConfig{};
  c.lr_decay_factor = 1.0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = ExperimentConfig{};
  c.scale_ranges = {{0, 10}, {11, 20}, {20, 40}, {40, 80}, {80, ExperimentConfig::kUnbounded}};
  EXPECT_THROW(c.validate(), ConfigError);  // gap between 10 and 11
}

TEST(Config, DefaultScaleRangesFollowImageSize) {
  ExperimentConfig c;
  auto r = c.effective_scale_ranges();
  ASSERT_EQ(r.size(), 5u);
  EXPECT_DOUBLE_EQ(r[0].second, 64 * 128.0 / 800.0);
  EXPECT_DOUBLE_EQ(r[4].second, ExperimentConfig::kUnbounded);
  EXPECT_DOUBLE_EQ(c.w_grid, 1.0);
  EXPECT_DOUBLE_EQ(c.w_image, 10.0);
  EXPECT_DOUBLE_EQ(c.score_threshold, 0.05);
  EXPECT_DOUBLE_EQ(c.nms_iou, 0.5);
  EXPECT_EQ(c.max_detections, 300);
}
