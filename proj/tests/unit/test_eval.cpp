#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "camid/error.hpp"
#include "camid/eval.hpp"
#include "camid/io.hpp"
#include "test_support.hpp"

using namespace camid;
using namespace camid::testing;

namespace {

Errc code_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "no exception";
  return Errc::InvalidParam;
}

// Direct transcription of the score definition.
double oracle(const std::vector<int>& p, const std::vector<int>& y, const std::vector<bool>& alt,
              double w_u, double w_a) {
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double w = alt[i] ? w_a : w_u;
    num += w * (p[i] == y[i] ? 1.0 : 0.0);
    den += w;
  }
  return num / den;
}

nn::Model<double> random_model(std::uint64_t seed) {
  nn::ModelConfig c;
  c.stem_channels = 4;
  c.blocks = {{1, 3}, {1, 3}};
  c.num_classes = 3;
  nn::Model<double> m(c);
  m.initialize(seed);
  Rng rng(seed + 1);
  for (auto& p : m.parameters())
    for (auto& v : p.values()) v += rng.uniform(-0.3, 0.3);
  return m;
}

std::vector<LabeledImage> val_set(int n, int side, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<LabeledImage> out;
  for (int i = 0; i < n; ++i) out.push_back({smooth_image(side, side, rng), i % 3});
  return out;
}

}  // namespace

TEST(WeightedAccuracy, WorkedExamples) {
  const std::vector<int> y{0, 1, 2};
  EXPECT_NEAR(weighted_accuracy(std::vector<int>{0, 1, 0}, y, {false, true, true}), 0.769231, 5e-7);
  EXPECT_DOUBLE_EQ(weighted_accuracy(std::vector<int>{0, 1, 0}, y, {false, true, true}), 1.0 / 1.3);
  EXPECT_EQ(weighted_accuracy(y, y, {false, true, true}), 1.0);
  EXPECT_EQ(weighted_accuracy(std::vector<int>{1, 2, 0}, y, {false, true, false}), 0.0);
  // The printed 1/n prefactor caps a perfect score at 1/n.
  EXPECT_DOUBLE_EQ(weighted_accuracy(y, y, {false, true, true}, {}, true), 1.0 / 3.0);
}

TEST(WeightedAccuracy, Errors) {
  const std::vector<int> a{0, 1}, b{0};
  EXPECT_EQ(code_of([&] { weighted_accuracy(a, b, {false, false}); }), Errc::LengthMismatch);
  EXPECT_EQ(code_of([&] { weighted_accuracy(a, a, {false}); }), Errc::LengthMismatch);
  EXPECT_EQ(code_of([&] { weighted_accuracy(std::vector<int>{}, std::vector<int>{}, {}); }),
            Errc::EmptyInput);
  EXPECT_EQ(code_of([&] { weighted_accuracy(a, a, {false, true}, EvalWeights{0.7, 0.0}); }),
            Errc::InvalidParam);
  EXPECT_EQ(code_of([&] { plain_accuracy(a, b); }), Errc::LengthMismatch);
  EXPECT_EQ(code_of([&] { plain_accuracy(std::vector<int>{}, std::vector<int>{}); }),
            Errc::EmptyInput);
}

TEST(WeightedAccuracy, MatchesBruteForceOracleOnRandomInstances) {
  Rng rng(1);
  for (int trial = 0; trial < 1000; ++trial) {
    const auto n = static_cast<std::size_t>(rng.uniform_int(1, 60));
    const int classes = static_cast<int>(rng.uniform_int(2, 10));
    std::vector<int> p(n), y(n);
    std::vector<bool> alt(n);
    for (std::size_t i = 0; i < n; ++i) {
      p[i] = static_cast<int>(rng.uniform_int(0, classes - 1));
      y[i] = rng.bernoulli(0.6) ? p[i] : static_cast<int>(rng.uniform_int(0, classes - 1));
      alt[i] = rng.bernoulli(0.5);
    }
    const EvalWeights w = trial % 2 ? EvalWeights{} : EvalWeights{rng.uniform(0.1, 2), rng.uniform(0.1, 2)};
    const double got = weighted_accuracy(p, y, alt, w);
    ASSERT_EQ(got, oracle(p, y, alt, w.unaltered, w.altered)) << trial;
    ASSERT_GE(got, 0.0);
    ASSERT_LE(got, 1.0);
    const bool all_right = std::equal(p.begin(), p.end(), y.begin());
    ASSERT_EQ(got == 1.0, all_right);

    // Joint permutation leaves the score unchanged.
    std::vector<std::size_t> perm(n);
    for (std::size_t i = 0; i < n; ++i) perm[i] = i;
    rng.shuffle(std::span<std::size_t>(perm));
    std::vector<int> pp(n), yy(n);
    std::vector<bool> aa(n);
    for (std::size_t i = 0; i < n; ++i) {
      pp[i] = p[perm[i]];
      yy[i] = y[perm[i]];
      aa[i] = alt[perm[i]];
    }
    ASSERT_NEAR(weighted_accuracy(pp, yy, aa, w), got, 1e-15);
  }
}

TEST(PlainAccuracy, ExamplesAndEqualWeightIdentity) {
  const std::vector<int> y{0, 1, 2, 1};
  EXPECT_EQ(plain_accuracy(y, y), 1.0);
  EXPECT_EQ(plain_accuracy(std::vector<int>{0, 1, 2, 0}, y), 0.75);
  Rng rng(2);
  for (int t = 0; t < 100; ++t) {
    std::vector<int> p(8), l(8);
    std::vector<bool> alt(8);
    for (int i = 0; i < 8; ++i) {
      p[static_cast<std::size_t>(i)] = static_cast<int>(rng.uniform_int(0, 2));
      l[static_cast<std::size_t>(i)] = static_cast<int>(rng.uniform_int(0, 2));
      alt[static_cast<std::size_t>(i)] = rng.bernoulli(0.5);
    }
    EXPECT_NEAR(weighted_accuracy(p, l, alt, {0.5, 0.5}), plain_accuracy(p, l), 1e-15);
  }
}

TEST(PredictionLoss, MatchesCrossEntropy) {
  const std::vector<double> uniform(10, 0.1);
  EXPECT_NEAR(prediction_loss(uniform, 3), 3.25083, 1e-4);
  EXPECT_NEAR(prediction_loss(uniform, 3, nn::LossKind::Categorical), std::log(10.0), 1e-12);
}

TEST(Sweep, TransformNamesAndGrids) {
  for (auto t : {SweepTransform::Gamma, SweepTransform::Jpeg, SweepTransform::Scale,
                 SweepTransform::Contrast, SweepTransform::CropSize}) {
    EXPECT_EQ(parse_sweep_transform(to_string(t)), t);
    SweepSpec spec{t, default_grid(t)};
    EXPECT_NO_THROW(spec.validate());
    EXPECT_TRUE(std::is_sorted(spec.grid.begin(), spec.grid.end()));
  }
  EXPECT_EQ(default_grid(SweepTransform::Gamma).size(), 9u);
  EXPECT_EQ(default_grid(SweepTransform::Scale),
            (std::vector<double>{0.4, 0.5, 0.75, 1.0, 1.5, 2.0, 2.5}));
  EXPECT_THROW(parse_sweep_transform("blur"), Error);
  EXPECT_THROW((SweepSpec{SweepTransform::Gamma, {}}.validate()), Error);
  EXPECT_THROW((SweepSpec{SweepTransform::Gamma, {-1.0}}.validate()), Error);
  EXPECT_THROW((SweepSpec{SweepTransform::Jpeg, {75.5}}.validate()), Error);
  EXPECT_THROW((SweepSpec{SweepTransform::Jpeg, {101}}.validate()), Error);
}

TEST(Sweep, IdentityPointEqualsBaselineBitForBit) {
  const auto m = random_model(3);
  const auto val = val_set(9, 20, 3);
  const auto base = evaluate_images(m, val, 16);
  EXPECT_EQ(base.n_images, 9u);
  for (auto [t, identity] : {std::pair{SweepTransform::Gamma, 1.0}, {SweepTransform::Scale, 1.0},
                             {SweepTransform::Contrast, 1.0}}) {
    const auto sweep = robustness_sweep(m, val, SweepSpec{t, {0.8, identity, 1.2}}, 16);
    ASSERT_EQ(sweep.points.size(), 3u);
    EXPECT_EQ(sweep.points[0].param, 0.8);
    EXPECT_EQ(sweep.points[1].param, identity);
    EXPECT_EQ(sweep.points[1].accuracy, base.accuracy);
    EXPECT_EQ(sweep.points[1].loss, base.loss);
  }
  const auto parallel = robustness_sweep(m, val, SweepSpec{SweepTransform::Jpeg, {70, 90}}, 16, {}, 3);
  const auto serial = robustness_sweep(m, val, SweepSpec{SweepTransform::Jpeg, {70, 90}}, 16, {}, 1);
  EXPECT_EQ(parallel.csv(), serial.csv());
}

TEST(Sweep, ShrinkingScaleCountsSkips) {
  const auto m = random_model(4);
  const auto val = val_set(6, 20, 4);
  const auto sweep = robustness_sweep(m, val, SweepSpec{SweepTransform::Scale, {0.5}}, 16);
  EXPECT_EQ(sweep.points[0].n_images, 0u);
  EXPECT_EQ(sweep.points[0].n_skipped, 6u);
  EXPECT_FALSE(sweep.points[0].error.empty());
  EXPECT_NE(sweep.csv().find("scale,0.5,nan,nan,0,6"), std::string::npos) << sweep.csv();
}

TEST(CropSweep, FullSizeMatchesSingleViewAndErrorsPerSize) {
  const auto m = random_model(5);
  auto val = val_set(6, 20, 5);
  TtaOptions single;
  single.five_crops = false;
  single.dihedral = false;
  const auto base = evaluate_images(m, val, 20, single);
  const auto sweep = crop_size_sweep(m, val, {1, 8, 12, 20, 24});
  ASSERT_EQ(sweep.points.size(), 5u);
  EXPECT_EQ(sweep.transform, SweepTransform::CropSize);
  std::vector<double> params;
  for (const auto& p : sweep.points) params.push_back(p.param);
  EXPECT_EQ(params, (std::vector<double>{1, 8, 12, 20, 24}));
  EXPECT_FALSE(sweep.points[0].error.empty());
  EXPECT_TRUE(std::isnan(sweep.points[0].accuracy));
  EXPECT_TRUE(sweep.points[1].error.empty());
  EXPECT_EQ(sweep.points[3].accuracy, base.accuracy);
  EXPECT_EQ(sweep.points[3].loss, base.loss);
  EXPECT_NE(sweep.points[4].error.find("exceeds"), std::string::npos);
  const auto routed = robustness_sweep(m, val, SweepSpec{SweepTransform::CropSize, {8, 20}}, 16);
  EXPECT_EQ(routed.points[1].accuracy, sweep.points[3].accuracy);
  EXPECT_EQ(routed.csv().rfind("transform,param,accuracy,loss,n_images,n_skipped\ncrop,8,", 0), 0u);
}

TEST(Summarize, ScoresSuccessfulPredictions) {
  std::vector<RecordPrediction> preds(4);
  const int labels[] = {0, 1, 2, 0};
  const bool altered[] = {false, true, true, false};
  const int guesses[] = {0, 1, 0, 0};
  for (std::size_t i = 0; i < 4; ++i) {
    preds[i].record.class_id = labels[i];
    preds[i].record.altered = altered[i];
    std::vector<double> p(3, 0.1);
    p[static_cast<std::size_t>(guesses[i])] = 0.8;
    preds[i].prediction = PredictionVector{p, guesses[i], 40};
  }
  preds[3].prediction.reset();
  preds[3].error = "IoError: gone";
  const auto r = summarize(preds);
  EXPECT_EQ(r.n_images, 3u);
  EXPECT_EQ(r.n_failed, 1u);
  EXPECT_NEAR(r.weighted_accuracy, 0.769231, 5e-7);
  EXPECT_DOUBLE_EQ(r.accuracy, 2.0 / 3.0);
  const double hit = -(std::log(0.8) + 2 * std::log(0.9));
  const double miss = -(std::log(0.1) + std::log(0.2) + std::log(0.9));
  EXPECT_NEAR(r.loss, (2 * hit + miss) / 3, 1e-12);
  EXPECT_NE(r.summary().find("failed: 1"), std::string::npos);
  preds.resize(1);
  preds[0].prediction.reset();
  EXPECT_EQ(code_of([&] { summarize(preds); }), Errc::EmptyInput);
}

TEST(Ablation, SeededSubsamplesAndFullSizeEqualsPlainTraining) {
  TempDir dir;
  Rng rng(6);
  std::vector<ManifestRecord> manifest;
  for (int i = 0; i < 16; ++i) {
    ManifestRecord r;
    r.path = (dir / ("i" + std::to_string(i) + ".png")).string();
    r.class_id = i % 2;
    r.class_name = i % 2 ? "b" : "a";
    r.split = i < 12 ? Split::Train : Split::Val;
    auto img = random_image(24, 24, rng);
    if (r.class_id) for (auto& v : img.data()) v /= 3;
    write_png(r.path, img);
    manifest.push_back(r);
  }
  TrainConfig cfg;
  cfg.pre_crop = 24;
  cfg.train_crop = 16;
  cfg.batch_size = 4;
  cfg.iterations = 3;
  cfg.model.stem_channels = 4;
  cfg.model.blocks = {{1, 3}, {1, 3}};
  cfg.model.num_classes = 2;
  TtaOptions quick;
  quick.dihedral = false;

  const auto a = train_size_ablation<float>(manifest, {6, 12}, cfg, quick);
  const auto b = train_size_ablation<float>(manifest, {6, 12}, cfg, quick);
  EXPECT_EQ(ablation_csv(a), ablation_csv(b));
  ASSERT_EQ(a.size(), 2u);
  EXPECT_EQ(a[0].train_size, 6u);
  EXPECT_EQ(a[1].validation.n_images, 4u);

  const auto full = train<float>(manifest, cfg);
  const auto loaded = load_images(filter_split(manifest, Split::Val));
  const auto direct = evaluate_images(full.model, loaded.images, 16, quick);
  EXPECT_EQ(a[1].validation.accuracy, direct.accuracy);
  EXPECT_EQ(a[1].validation.loss, direct.loss);
  EXPECT_EQ(ablation_csv(a).rfind("train_size,accuracy,loss,n_images,n_skipped\n6,", 0), 0u);

  EXPECT_EQ(code_of([&] { train_size_ablation<float>(manifest, {13}, cfg); }), Errc::InsufficientData);
  EXPECT_EQ(code_of([&] { train_size_ablation<float>(manifest, {0}, cfg); }), Errc::InsufficientData);
}
