#include <gtest/gtest.h>

#include <fstream>
#include <set>

#include "camid/config.hpp"
#include "camid/error.hpp"
#include "camid/io.hpp"
#include "camid/synth.hpp"
#include "test_support.hpp"

using namespace camid;
using namespace camid::testing;
using nlohmann::json;

namespace {

std::string config_error(const json& j) {
  try {
    run_config_from_json(j);
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::ConfigError);
    return e.what();
  }
  ADD_FAILURE() << "accepted " << j.dump();
  return {};
}

double mean_abs_highpass(const ImageU8& img) {
  double s = 0;
  int n = 0;
  for (int y = 1; y + 1 < img.height(); ++y)
    for (int x = 1; x + 1 < img.width(); ++x) {
      const double c = img.at(y, x, 1);
      s += std::abs(4 * c - img.at(y - 1, x, 1) - img.at(y + 1, x, 1) - img.at(y, x - 1, 1) -
                    img.at(y, x + 1, 1));
      ++n;
    }
  return s / n;
}

}  // namespace

TEST(RunConfig, DefaultsRoundTripThroughJson) {
  const RunConfig def;
  EXPECT_NO_THROW(def.validate());
  const auto j = to_json(def);
  EXPECT_EQ(to_json(run_config_from_json(j)), j);
  EXPECT_EQ(to_json(run_config_from_json(json::object())), j);
  EXPECT_EQ(j["train"]["pre_crop"], 960);
  EXPECT_EQ(j["train"]["train_crop"], 480);
  EXPECT_EQ(j["weights"]["unaltered"], 0.7);
  EXPECT_EQ(j["curation"]["min_jpeg_quality"], 95);
  EXPECT_EQ(def.infer_crop(), 480);
}

TEST(RunConfig, PartialOverridesKeepOtherDefaults) {
  const auto cfg = run_config_from_json(json::parse(R"({
    "seed": 17, "workers": 2, "precision": "f64",
    "train": {"iterations": 50, "loss": "categorical",
              "model": {"stem_channels": 8, "num_classes": 3}},
    "infer": {"crop": 64, "averaging": "logit"}
  })"));
  EXPECT_EQ(cfg.seed, 17u);
  EXPECT_EQ(cfg.train.seed, 17u);
  EXPECT_EQ(cfg.train.workers, 2);
  EXPECT_EQ(cfg.synth.seed, 17u);
  EXPECT_EQ(cfg.train.iterations, 50);
  EXPECT_EQ(cfg.train.batch_size, 8);
  EXPECT_EQ(cfg.train.loss, nn::LossKind::Categorical);
  EXPECT_EQ(cfg.train.model.stem_channels, 8);
  EXPECT_EQ(cfg.train.model.blocks.size(), 3u);
  EXPECT_EQ(cfg.infer.tta.averaging, Averaging::Logit);
  EXPECT_EQ(cfg.infer_crop(), 64);
}

TEST(RunConfig, UnknownKeysAreNamed) {
  EXPECT_NE(config_error(json::parse(R"({"bogus": 1})")).find("'bogus'"), std::string::npos);
  EXPECT_NE(config_error(json::parse(R"({"train": {"bogus": 1}})")).find("train.bogus"),
            std::string::npos);
  EXPECT_NE(config_error(json::parse(R"({"train": {"model": {"depth": 1}}})")).find("depth"),
            std::string::npos);
}

TEST(RunConfig, BadValuesAreConfigErrors) {
  config_error(json::parse(R"({"train": {"iterations": "many"}})"));
  config_error(json::parse(R"({"train": {"batch_size": 0}})"));
  config_error(json::parse(R"({"precision": "f16"})"));
  config_error(json::parse(R"({"train": {"loss": "hinge"}})"));
  config_error(json::parse(R"({"weights": {"altered": -1}})"));
  config_error(json::parse(R"([1, 2])"));
}

TEST(RunConfig, LoadFromFile) {
  TempDir dir;
  std::ofstream(dir / "c.json") << R"({"val_per_class": 5})";
  EXPECT_EQ(load_run_config(dir / "c.json").val_per_class, 5);
  std::ofstream(dir / "bad.json") << "{ not json";
  try {
    load_run_config(dir / "bad.json");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::ConfigError);
  }
  try {
    load_run_config(dir / "missing.json");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::IoError);
  }
}

TEST(Synth, ClassFiltersSumToOneAndDiffer) {
  std::set<std::array<double, 9>> seen;
  for (int c = 0; c < 4; ++c) {
    const auto f = class_filter(c, 4);
    double s = 0;
    for (double v : f) s += v;
    EXPECT_NEAR(s, 1.0, 1e-12);
    seen.insert(f);
  }
  EXPECT_EQ(seen.size(), 4u);
  const auto id = class_filter(0, 3);
  EXPECT_EQ(id[4], 1.0);
}

TEST(Synth, TraceIsSeededAndClassDependent) {
  SynthOptions opt;
  Rng scene_rng(1);
  const auto scene = synth_scene(48, scene_rng);
  Rng a(2), b(2);
  EXPECT_EQ(apply_camera_trace(scene, 1, opt, a), apply_camera_trace(scene, 1, opt, b));
  Rng c(2), d(2);
  EXPECT_NE(apply_camera_trace(scene, 0, opt, c), apply_camera_trace(scene, 2, opt, d));
  // Smoothing strength grows with the class index.
  opt.texture_amplitude = 0;
  opt.noise_sigma = 0;
  Rng e(3), f(3);
  EXPECT_GT(mean_abs_highpass(apply_camera_trace(scene, 0, opt, e)),
            mean_abs_highpass(apply_camera_trace(scene, 2, opt, f)));
}

TEST(Synth, DatasetLayoutAndDeterminism) {
  TempDir dir;
  SynthOptions opt;
  opt.train_per_class = 3;
  opt.val_per_class = 2;
  opt.train_size = 32;
  opt.val_size = 24;
  opt.seed = 4;
  const auto recs = make_synthetic_dataset(opt, dir / "a", 1);
  ASSERT_EQ(recs.size(), 15u);
  EXPECT_EQ(read_manifest(dir / "a" / "manifest.jsonl"), recs);
  int val = 0;
  for (const auto& r : recs) {
    const auto img = read_image(r.path);
    const int side = r.split == Split::Val ? 24 : 32;
    EXPECT_EQ(img.height(), side);
    EXPECT_EQ(r.width, side);
    val += r.split == Split::Val;
  }
  EXPECT_EQ(val, 6);
  const auto again = make_synthetic_dataset(opt, dir / "b", 3);
  for (std::size_t i = 0; i < recs.size(); ++i) {
    EXPECT_EQ(read_file(recs[i].path), read_file(again[i].path));
  }
  opt.classes = 1;
  EXPECT_THROW(opt.validate(), Error);
}
