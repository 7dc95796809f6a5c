#include <gtest/gtest.h>

#include <filesystem>
#include <set>

#include "gridclip/augment.hpp"
#include "gridclip/sampler.hpp"
#include "gridclip/synth_data.hpp"

using namespace gridclip;

TEST(Bucketing, ExactPartition) {
  Rng rng(3);
  for (int trial = 0; trial < 500; ++trial) {
    const int f = 1 + static_cast<int>(rng.index(400));
    const Bucket b = bucket_for(f);
    if (f <= 10) EXPECT_TRUE(b == Bucket::Rare);
    else if (f <= 100) EXPECT_TRUE(b == Bucket::Common);
    else EXPECT_TRUE(b == Bucket::Frequent);
  }
  EXPECT_THROW(bucket_for(0), GenerationError);
}

TEST(Generator, DeterministicGivenSeed) {
  auto a = generate_dataset(7, 6, 240, 1.2, 64);
  auto b = generate_dataset(7, 6, 240, 1.2, 64);
  ASSERT_EQ(a.images.size(), b.images.size());
  for (std::size_t i = 0; i < a.images.size(); ++i) {
    EXPECT_EQ(a.images[i].pixels, b.images[i].pixels);
    EXPECT_EQ(a.images[i].labels, b.images[i].labels);
    ASSERT_EQ(a.images[i].boxes.size(), b.images[i].boxes.size());
    for (std::size_t j = 0; j < a.images[i].boxes.size(); ++j)
      EXPECT_DOUBLE_EQ(a.images[i].boxes[j].x1, b.images[i].boxes[j].x1);
  }
}

TEST(Generator, ManifestFrequenciesMatchActualCounts) {
  auto ds = generate_dataset(0, 12, 600, 1.2);
  std::map<std::string, int> count;
  for (const auto& img : ds.images) {
    std::set<std::string> distinct(img.labels.begin(), img.labels.end());
    for (const auto& n : distinct) ++count[n];
  }
  for (const auto& c : ds.manifest.categories) EXPECT_EQ(count[c.name], c.frequency);
}

TEST(Generator, AcceptanceScaleCorpusHasAllBucketsAndValidObjects) {
  auto ds = generate_dataset(0, 12, 600, 1.2);
  int rare = 0, common = 0, frequent = 0;
  for (const auto& c : ds.manifest.categories) {
    EXPECT_EQ(c.bucket, bucket_for(c.frequency));
    EXPECT_TRUE((c.split == Split::Novel) == (c.bucket == Bucket::Rare));
    if (c.bucket == Bucket::Rare) ++rare;
    else if (c.bucket == Bucket::Common) ++common;
    else ++frequent;
  }
  EXPECT_GE(rare, 1);
  EXPECT_GE(common, 1);
  EXPECT_GE(frequent, 1);
  for (const auto& img : ds.images) {
    EXPECT_GE(img.boxes.size(), 1u);
    EXPECT_LE(img.boxes.size(), 6u);
    for (const auto& b : img.boxes) {
      EXPECT_TRUE(b.valid());
      EXPECT_GE(b.x1, 0.0);
      EXPECT_LE(b.x2, 128.0);
    }
    for (const auto& v : img.pixels) {
      EXPECT_GE(v, 0.0f);
      EXPECT_LE(v, 1.0f);
    }
  }
}

TEST(Generator, FrequencyFiveIsRareAndNovel) {
  auto ds = generate_dataset(0, 12, 600, 1.2);
  bool saw_rare = false;
  for (const auto& c : ds.manifest.categories)
    if (c.frequency >= 1 && c.frequency <= 10) {
      saw_rare = true;
      EXPECT_EQ(c.bucket, Bucket::Rare);
      EXPECT_EQ(c.split, Split::Novel);
    }
  EXPECT_TRUE(saw_rare);
}

TEST(Generator, UniformZipfCannotRealizeBuckets) {
  // zipf_exponent 0 with n_images a multiple of n_categories gives
  // near-uniform frequencies and no rare bucket.
  EXPECT_THROW(generate_dataset(1, 10, 500, 0.0), GenerationError);
}

TEST(Generator, ParameterValidation) {
  EXPECT_THROW(generate_dataset(0, 2, 100, 1.2), GenerationError);
  EXPECT_THROW(generate_dataset(0, 10, 5, 1.2), GenerationError);
}

TEST(DatasetIO, RoundTripPreservesEverything) {
  auto ds = generate_dataset(11, 5, 240, 1.0, 64);
  const std::string dir = (std::filesystem::temp_directory_path() / "gridclip_ds_test").string();
  std::filesystem::remove_all(dir);
  save_dataset(ds, dir);
  auto back = load_dataset(dir);
  ASSERT_EQ(back.images.size(), ds.images.size());
  ASSERT_EQ(back.manifest.categories.size(), ds.manifest.categories.size());
  for (std::size_t k = 0; k < ds.manifest.categories.size(); ++k) {
    EXPECT_EQ(back.manifest.categories[k].name, ds.manifest.categories[k].name);
    EXPECT_EQ(back.manifest.categories[k].frequency, ds.manifest.categories[k].frequency);
    EXPECT_EQ(back.manifest.categories[k].attrs.color, ds.manifest.categories[k].attrs.color);
  }
  for (std::size_t i = 0; i < ds.images.size(); ++i) {
    EXPECT_EQ(back.images[i].pixels, ds.images[i].pixels);  // byte-exact via PPM
    EXPECT_EQ(back.images[i].labels, ds.images[i].labels);
  }
  std::filesystem::remove_all(dir);
}

TEST(Augment, FlipMirrorsBoxes) {
  AnnotatedImage img;
  img.width = 10;
  img.height = 8;
  img.pixels.assign(10 * 8 * 3, 0.f);
  img.boxes.push_back(Box{2, 3, 5, 7});
  img.labels.push_back("x");
  AugmentPolicy p;
  p.flip_prob = 1.0;
  Rng rng(0);
  auto out = apply_augmentation(img, rng, p);
  EXPECT_DOUBLE_EQ(out.boxes[0].x1, 5.0);
  EXPECT_DOUBLE_EQ(out.boxes[0].y1, 3.0);
  EXPECT_DOUBLE_EQ(out.boxes[0].x2, 8.0);
  EXPECT_DOUBLE_EQ(out.boxes[0].y2, 7.0);
}

TEST(Augment, FlipIsInvolutionOnGeometry) {
  auto ds = generate_dataset(3, 4, 220, 1.0, 64);
  ds.images.resize(12);
  for (const auto& img : ds.images) {
    AugmentPolicy p;
    p.flip_prob = 1.0;
    Rng r1(1), r2(2);
    auto once = apply_augmentation(img, r1, p);
    auto twice = apply_augmentation(once, r2, p);
    ASSERT_EQ(twice.boxes.size(), img.boxes.size());
    for (std::size_t i = 0; i < img.boxes.size(); ++i) {
      EXPECT_NEAR(twice.boxes[i].x1, img.boxes[i].x1, 1e-12);
      EXPECT_NEAR(twice.boxes[i].x2, img.boxes[i].x2, 1e-12);
    }
    EXPECT_EQ(twice.pixels, img.pixels);
  }
}

TEST(Augment, ZeroFlipProbabilityKeepsGeometry) {
  auto ds = generate_dataset(5, 4, 220, 1.0, 64);
  AugmentPolicy p;
  p.flip_prob = 0.0;
  Rng rng(9);
  auto out = apply_augmentation(ds.images[0], rng, p);
  EXPECT_EQ(out.pixels, ds.images[0].pixels);
  for (std::size_t i = 0; i < out.boxes.size(); ++i)
    EXPECT_DOUBLE_EQ(out.boxes[i].x1, ds.images[0].boxes[i].x1);
}

TEST(Augment, ResizeFitsLongShortConstraintAndScalesBoxes) {
  AnnotatedImage img;
  img.width = 64;
  img.height = 64;
  img.pixels.assign(64 * 64 * 3, 0.5f);
  img.boxes.push_back(Box{8, 8, 40, 56});
  img.labels.push_back("x");
  AugmentPolicy p;
  p.flip_prob = 0.0;
  p.sizes = {{213, 32}};  // short edge binds: scale 0.5
  Rng rng(0);
  auto out = apply_augmentation(img, rng, p);
  EXPECT_EQ(out.width, 32);
  EXPECT_EQ(out.height, 32);
  EXPECT_DOUBLE_EQ(out.boxes[0].x1, 4.0);
  EXPECT_DOUBLE_EQ(out.boxes[0].y2, 28.0);
}

TEST(Augment, NeverProducesDegenerateBoxes) {
  auto ds = generate_dataset(17, 6, 240, 1.2);
  ds.images.resize(40);
  AugmentPolicy p;
  p.flip_prob = 0.5;
  p.sizes = {{213, 128}, {213, 102}, {213, 113}};
  p.crop_min_fraction = 0.5;
  Rng rng(1234);
  for (const auto& img : ds.images)
    for (int rep = 0; rep < 5; ++rep) {
      auto out = apply_augmentation(img, rng, p);
      for (const auto& b : out.boxes) {
        EXPECT_TRUE(b.valid());
        EXPECT_GE(b.x1, 0.0);
        EXPECT_GE(b.y1, 0.0);
        EXPECT_LE(b.x2, static_cast<double>(out.width));
        EXPECT_LE(b.y2, static_cast<double>(out.height));
      }
    }
}

TEST(Augment, EmptySizeListMeansIdentityScaleNotError) {
  // policy with no sizes keeps the original resolution by contract
  AnnotatedImage img;
  img.width = 16;
  img.height = 16;
  img.pixels.assign(16 * 16 * 3, 0.f);
  AugmentPolicy p;
  p.flip_prob = 0.0;
  Rng rng(0);
  auto out = apply_augmentation(img, rng, p);
  EXPECT_EQ(out.width, 16);
}

TEST(RepeatFactors, BoundaryAndScaling) {
  // Build a tiny dataset by hand: categories at f(c) = t, t/4 and above t.
  Dataset ds;
  ds.manifest.n_images = 100;
  CategoryInfo a, b, c;
  a.name = "a";
  b.name = "b";
  c.name = "c";
  ds.manifest.categories = {a, b, c};
  for (int i = 0; i < 100; ++i) {
    AnnotatedImage img;
    img.id = "img_" + std::to_string(i);
    img.width = img.height = 8;
    img.pixels.assign(8 * 8 * 3, 0.f);
    if (i < 4) {  // f = 0.04
      img.boxes.push_back(Box{0, 0, 2, 2});
      img.labels.push_back("a");
    } else if (i < 5) {  // f = 0.01
      img.boxes.push_back(Box{0, 0, 2, 2});
      img.labels.push_back("b");
    } else {  // f = 0.95
      img.boxes.push_back(Box{0, 0, 2, 2});
      img.labels.push_back("c");
    }
    ds.images.push_back(std::move(img));
  }
  auto rf = compute_repeat_factors(ds, 0.04);
  EXPECT_DOUBLE_EQ(rf.category_factor["a"], 1.0);  // f == t
  EXPECT_DOUBLE_EQ(rf.category_factor["b"], 2.0);  // f == t/4 -> sqrt(4)
  EXPECT_DOUBLE_EQ(rf.category_factor["c"], 1.0);  // f > t clamps to 1
  EXPECT_TRUE(rf.excluded_categories.empty());
}

TEST(RepeatFactors, ZeroFrequencyCategoryExcludedAndReported) {
  auto ds = generate_dataset(0, 12, 600, 1.2);
  auto train = drop_novel_boxes(ds);
  auto rf = compute_repeat_factors(train, 0.001);
  std::set<std::string> excluded(rf.excluded_categories.begin(), rf.excluded_categories.end());
  for (const auto& c : ds.manifest.categories) {
    if (c.split == Split::Novel) EXPECT_TRUE(excluded.count(c.name));
  }
  for (double f : rf.image_factor) EXPECT_GE(f, 1.0);
}

TEST(RepeatFactors, MonotoneNonIncreasingInFrequency) {
  auto ds = generate_dataset(0, 12, 600, 1.2);
  auto rf = compute_repeat_factors(ds, 0.05);
  const auto& cats = ds.manifest.categories;
  for (std::size_t i = 1; i < cats.size(); ++i) {
    if (cats[i - 1].frequency >= cats[i].frequency) {
      EXPECT_LE(rf.category_factor[cats[i - 1].name], rf.category_factor[cats[i].name] + 1e-12);
    }
  }
}

TEST(EpochSampling, AllOnesIsPermutation) {
  std::vector<double> f(10, 1.0);
  Rng rng(0);
  auto idx = sample_epoch_indices(f, rng);
  std::set<int> seen(idx.begin(), idx.end());
  EXPECT_EQ(idx.size(), 10u);
  EXPECT_EQ(seen.size(), 10u);
}

TEST(EpochSampling, IntegerFactorExactCopies) {
  std::vector<double> f = {2.0, 1.0, 3.0};
  Rng rng(1);
  auto idx = sample_epoch_indices(f, rng);
  EXPECT_EQ(std::count(idx.begin(), idx.end(), 0), 2);
  EXPECT_EQ(std::count(idx.begin(), idx.end(), 1), 1);
  EXPECT_EQ(std::count(idx.begin(), idx.end(), 2), 3);
}

TEST(EpochSampling, FractionalFactorMonteCarloMean) {
  std::vector<double> f = {1.5};
  Rng rng(99);
  long total = 0;
  const int trials = 10000;
  for (int i = 0; i < trials; ++i) total += static_cast<long>(sample_epoch_indices(f, rng).size());
  const double mean = static_cast<double>(total) / trials;
  EXPECT_NEAR(mean, 1.5, 0.05);
}
