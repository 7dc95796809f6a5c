#include <gtest/gtest.h>

#include "gridclip/trainer.hpp"

using namespace gridclip;

namespace {

struct TrainFixture {
  ExperimentConfig cfg;
  Dataset ds;
  EmbeddingBank bank;
  Teacher teacher = Teacher::seeded(0, 64);

  explicit TrainFixture(int epochs = 1, int images = 16) {
    cfg.image_height = cfg.image_width = 64;
    cfg.seed = 3;
    cfg.epochs = epochs;
    cfg.batch_size = 8;
    cfg.lr_decay_epochs = {};
    cfg.warmup_iters = 2;
    cfg.resize_sizes = {};
    ds = generate_dataset(3, 5, 240, 1.0, 64);
    ds.images.resize(static_cast<std::size_t>(images));
    std::vector<std::string> names;
    for (const auto& c : ds.manifest.categories) names.push_back(c.name);
    bank = build_synthetic_bank(ds.manifest, names, cfg.seed, cfg.embed_dim, TextMode::Attribute,
                                cfg.prompt_templates);
    teacher = Teacher::seeded(cfg.seed, cfg.teacher_dim);
  }
};

}  // namespace

TEST(Trainer, ZeroEpochsLeavesModelUntouched) {
  TrainFixture fx(0);
  GridClipModel<float> model(fx.cfg);
  const auto before = model.params().content_hash();
  auto result = run_training(fx.cfg, fx.ds, fx.bank, fx.teacher, model);
  EXPECT_TRUE(result.trace.empty());
  EXPECT_EQ(model.params().content_hash(), before);
}

TEST(Trainer, DeterministicAcrossRunsAndTeacherFrozen) {
  TrainFixture fx(2);
  const auto teacher_hash = fx.teacher.params_hash();

  GridClipModel<float> a(fx.cfg);
  auto ra = run_training(fx.cfg, fx.ds, fx.bank, fx.teacher, a);
  GridClipModel<float> b(fx.cfg);
  auto rb = run_training(fx.cfg, fx.ds, fx.bank, fx.teacher, b);

  EXPECT_EQ(a.params().content_hash(), b.params().content_hash());
  EXPECT_EQ(trace_to_csv(ra.trace), trace_to_csv(rb.trace));
  EXPECT_EQ(fx.teacher.params_hash(), teacher_hash);
}

TEST(Trainer, TraceIdentityHoldsRowByRow) {
  TrainFixture fx(1);
  GridClipModel<float> model(fx.cfg);
  auto result = run_training(fx.cfg, fx.ds, fx.bank, fx.teacher, model);
  ASSERT_FALSE(result.trace.empty());
  const std::string csv = trace_to_csv(result.trace);
  const auto rows = parse_trace_csv(csv);
  ASSERT_EQ(rows.size(), result.trace.size());
  for (const auto& r : rows) {
    const double recombined =
        combine_total_loss(r.l_grid, r.l_image, r.l_reg, r.l_ctr, fx.cfg.w_grid, fx.cfg.w_image);
    EXPECT_EQ(r.total, recombined);  // exact arithmetic identity after round trip
  }
}

TEST(Trainer, NonFiniteLossAbortsNamingComponent) {
  TrainFixture fx(1);
  GridClipModel<float> model(fx.cfg);
  model.params()["align.l3.w"].fill(std::numeric_limits<float>::quiet_NaN());
  try {
    run_training(fx.cfg, fx.ds, fx.bank, fx.teacher, model);
    FAIL() << "expected TrainError";
  } catch (const TrainError& e) {
    EXPECT_NE(std::string(e.what()).find("l_image"), std::string::npos);
  }
}

TEST(Trainer, CheckpointRoundTripPreservesParamsBitwise) {
  TrainFixture fx(1);
  GridClipModel<float> model(fx.cfg);
  auto result = run_training(fx.cfg, fx.ds, fx.bank, fx.teacher, model);
  (void)result;
  const auto path = std::filesystem::temp_directory_path() / "gridclip_ckpt_test.bin";
  std::ostringstream cfg_text;
  save_config(fx.cfg, cfg_text);
  save_checkpoint(model.params(), cfg_text.str(), path.string());

  auto ck = load_checkpoint(path.string());
  auto cfg_back = parse_config(*std::make_unique<std::istringstream>(ck.config_text));
  GridClipModel<float> restored(cfg_back);
  restore_params(restored.params(), ck);
  EXPECT_EQ(restored.params().content_hash(), model.params().content_hash());
  std::filesystem::remove(path);
}

TEST(Trainer, SupervisionRestrictedToBankCategories) {
  // Train against a bank holding only base categories: novel boxes are
  // dropped, their images still pass through (distillation only).
  TrainFixture fx(1, 24);
  auto base_names = fx.ds.manifest.names_with_split(Split::Base);
  auto base_bank = build_synthetic_bank(fx.ds.manifest, base_names, fx.cfg.seed, fx.cfg.embed_dim,
                                        TextMode::Attribute, fx.cfg.prompt_templates);
  GridClipModel<float> model(fx.cfg);
  auto result = run_training(fx.cfg, fx.ds, base_bank, fx.teacher, model);
  EXPECT_FALSE(result.trace.empty());
  for (const auto& r : result.trace) {
    EXPECT_TRUE(std::isfinite(r.total));
    EXPECT_GE(r.l_grid, 0.0);
  }
}
