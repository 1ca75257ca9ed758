// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any fails.
// Criteria 3 and 6-8 share the two desk-scale models trained through the CLI.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>

#include "camid/dataset.hpp"
#include "camid/eval.hpp"
#include "camid/infer.hpp"
#include "camid/io.hpp"
#include "camid/jpeg.hpp"
#include "camid/nn/checkpoint.hpp"
#include "camid/nn/gradcheck.hpp"
#include "camid/nn/model.hpp"
#include "cli.hpp"
#include "test_support.hpp"

using namespace camid;
using namespace camid::testing;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

struct Verdict {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

int cli_run(std::vector<std::string> args) {
  args.insert(args.begin(), "camid");
  std::ostringstream out, err;
  const int code = cli::run(args, out, err);
  if (code != 0) std::cerr << "camid exited " << code << ": " << err.str() << "\n";
  return code;
}

// ----------------------------------------------------------------- 1

Verdict gradients() {
  const auto t0 = Clock::now();
  double worst_op = 0, worst_model = 0;
  std::string failed;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    for (const auto& e : nn::gradient_suite(seed, 1e-5)) {
      (e.name == "model" ? worst_model : worst_op) =
          std::max(e.name == "model" ? worst_model : worst_op, e.max_rel_error);
      if (!e.passed() && failed.empty()) failed = e.name + fmt(" seed %d", static_cast<int>(seed));
    }
  }
  const double secs = seconds_since(t0);
  const bool ok = failed.empty() && worst_op < 1e-4 && worst_model < 1e-3 && secs < 120;
  return {ok, fmt("20 seeds, worst op %.2e, worst model %.2e, %.1fs", worst_op, worst_model, secs) +
                  (failed.empty() ? "" : ", first failure " + failed)};
}

// ----------------------------------------------------------------- 2

Verdict d4_group() {
  const auto t0 = Clock::now();
  int bad = 0;
  for (D4 a : kAllD4)
    for (D4 b : kAllD4)
      for (D4 c : kAllD4)
        bad += d4_compose(d4_compose(a, b), c) != d4_compose(a, d4_compose(b, c));
  for (D4 g : kAllD4) {
    bad += d4_compose(g, D4::E) != g || d4_compose(D4::E, g) != g;
    bad += d4_compose(g, d4_inverse(g)) != D4::E || d4_compose(d4_inverse(g), g) != D4::E;
  }
  Rng rng(2);
  int images = 0;
  for (D4 a : kAllD4)
    for (D4 b : kAllD4) {
      const int h = static_cast<int>(rng.uniform_int(3, 17));
      const int w = static_cast<int>(rng.uniform_int(3, 17));
      const auto img = random_image(h, w, rng);
      bad += d4_apply(d4_apply(img, b), a) != d4_apply(img, d4_compose(a, b));
      ++images;
    }
  const double secs = seconds_since(t0);
  return {bad == 0 && secs < 10,
          fmt("512 triples, 8 identity/inverse pairs, %d compose images, %d violations, %.2fs",
              images, bad, secs)};
}

// ----------------------------------------------------------------- 3

Verdict tta_invariance(const nn::Model<float>& model, int crop) {
  const auto t0 = Clock::now();
  Rng rng(3);
  double worst = 0;
  bool counts = true;
  for (int i = 0; i < 20; ++i) {
    // Even margins keep the center crop on the symmetry axis.
    const int side = crop + 2 * static_cast<int>(rng.uniform_int(0, 12));
    const auto img = random_image(side, side, rng);
    ViewCounter c0{0};
    const auto base = tta_predict(model, img, crop, {}, &c0);
    counts = counts && c0.load() == 40;
    for (D4 g : kAllD4) {
      ViewCounter c{0};
      const auto moved = tta_predict(model, d4_apply(img, g), crop, {}, &c);
      counts = counts && c.load() == 40;
      for (std::size_t k = 0; k < base.probabilities.size(); ++k)
        worst = std::max(worst, std::abs(moved.probabilities[k] - base.probabilities[k]));
    }
  }
  const double secs = seconds_since(t0);
  return {worst <= 1e-5 && counts && secs < 60,
          fmt("20 images x 8 actions, max deviation %.2e, counter %s, %.1fs", worst,
              counts ? "40" : "WRONG", secs)};
}

// ----------------------------------------------------------------- 4

Verdict metric_oracle() {
  Rng rng(4);
  int mismatches = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const auto n = static_cast<std::size_t>(rng.uniform_int(1, 80));
    const int classes = static_cast<int>(rng.uniform_int(2, 10));
    std::vector<int> p(n), y(n);
    std::vector<bool> alt(n);
    for (std::size_t i = 0; i < n; ++i) {
      p[i] = static_cast<int>(rng.uniform_int(0, classes - 1));
      y[i] = rng.bernoulli(0.5) ? p[i] : static_cast<int>(rng.uniform_int(0, classes - 1));
      alt[i] = rng.bernoulli(0.5);
    }
    double num = 0, den = 0;
    for (std::size_t i = 0; i < n; ++i) {
      const double w = alt[i] ? 0.3 : 0.7;
      num += w * (p[i] == y[i] ? 1.0 : 0.0);
      den += w;
    }
    mismatches += weighted_accuracy(p, y, alt) != num / den;
  }
  const double worked =
      weighted_accuracy(std::vector<int>{0, 1, 0}, std::vector<int>{0, 1, 2}, {false, true, true});
  const bool six = std::abs(worked - 0.769231) < 5e-7;
  return {mismatches == 0 && six,
          fmt("1000 instances, %d mismatches, worked example %.6f", mismatches, worked)};
}

// ----------------------------------------------------------------- 5

Verdict loss_values() {
  const nn::Tensor<double> uniform({1, 10}, 0.1);
  const double u = nn::cross_entropy(uniform, nn::one_hot<double>({3}, 10));
  const auto y = nn::one_hot<double>({1}, 4);
  const double perfect = nn::cross_entropy(y, y);
  return {std::abs(u - 3.25083) <= 1e-4 && perfect <= 1e-5 && perfect >= 0,
          fmt("uniform C=10 %.6f, perfect %.2e", u, perfect)};
}

// ----------------------------------------------------------------- 6-8

struct DeskRun {
  nn::Model<float> augmented{nn::ModelConfig{}};
  nn::Model<float> plain{nn::ModelConfig{}};
  std::vector<LabeledImage> val;
  std::vector<std::pair<int, double>> curve;
  double train_seconds = 0;
  bool ok = false;
};

constexpr int kCrop = 48;

constexpr const char* kDeskConfig = R"({
  "train": {"pre_crop": 96, "train_crop": 48, "batch_size": 8, "iterations": 2000,
            "learning_rate": 0.001, "log_every": 10,
            "model": {"stem_channels": 8, "blocks": [{"num_layers": 3, "growth_rate": 8},
                                                     {"num_layers": 3, "growth_rate": 8},
                                                     {"num_layers": 3, "growth_rate": 8}]}},
  "infer": {"crop": 48}
})";

std::vector<std::pair<int, double>> read_curve(const fs::path& p) {
  std::ifstream in(p);
  std::string line;
  std::getline(in, line);
  std::vector<std::pair<int, double>> out;
  while (std::getline(in, line)) {
    const auto comma = line.find(',');
    out.emplace_back(std::stoi(line.substr(0, comma)), std::stod(line.substr(comma + 1)));
  }
  return out;
}

DeskRun desk_run(const TempDir& dir, const std::string& manifest, const std::string& cfg) {
  DeskRun run;
  const auto t0 = Clock::now();
  const int a = cli_run({"--config", cfg, "--seed", "0", "train", "--manifest", manifest,
                         "--out-dir", (dir / "aug").string()});
  std::cerr << fmt("augmented model trained in %.1fs\n", seconds_since(t0));
  run.train_seconds = seconds_since(t0);
  const auto t1 = Clock::now();
  const int b = cli_run({"--config", cfg, "--seed", "0", "train", "--manifest", manifest,
                         "--out-dir", (dir / "noaug").string(), "--no-augment"});
  std::cerr << fmt("no-augmentation model trained in %.1fs\n", seconds_since(t1));
  if (a != 0 || b != 0) return run;
  run.augmented = nn::load_checkpoint<float>(dir / "aug" / "model.ckpt");
  run.plain = nn::load_checkpoint<float>(dir / "noaug" / "model.ckpt");
  run.curve = read_curve(dir / "aug" / "loss.csv");
  run.val = load_images(filter_split(read_manifest(manifest), Split::Val)).images;
  run.ok = true;
  return run;
}

Verdict end_to_end(const DeskRun& run, double& accuracy) {
  const auto t0 = Clock::now();
  const auto ev = evaluate_images(run.augmented, run.val, kCrop);
  accuracy = ev.accuracy;
  const double secs = run.train_seconds + seconds_since(t0);
  return {ev.accuracy >= 0.95 && ev.n_images == 60 && secs < 600,
          fmt("TTA val accuracy %.4f on %zu images, train+eval %.1fs", ev.accuracy, ev.n_images, secs)};
}

struct DropSummary {
  double baseline = 0;
  double worst_drop = 0;
  double max_deviation = 0;
  std::string where;
};

DropSummary sweep_drops(const nn::Model<float>& model, const std::vector<LabeledImage>& val) {
  DropSummary s;
  s.baseline = evaluate_images(model, val, kCrop).accuracy;
  const std::vector<SweepSpec> specs{{SweepTransform::Gamma, {0.8, 0.9, 1.1, 1.2}},
                                     {SweepTransform::Jpeg, {70, 80, 90}},
                                     {SweepTransform::Scale, {0.5, 0.75, 1.5, 2.0}}};
  s.worst_drop = -1;
  for (const auto& spec : specs) {
    for (const auto& p : robustness_sweep(model, val, spec, kCrop).points) {
      const double drop = p.n_images ? s.baseline - p.accuracy : s.baseline;
      s.max_deviation = std::max(s.max_deviation, std::abs(drop));
      if (drop > s.worst_drop) {
        s.worst_drop = drop;
        s.where = fmt("%s %g", std::string(to_string(spec.transform)).c_str(), p.param);
      }
    }
  }
  return s;
}

Verdict robustness(const DeskRun& run) {
  const auto t0 = Clock::now();
  const auto aug = sweep_drops(run.augmented, run.val);
  const auto plain = sweep_drops(run.plain, run.val);
  const double secs = 2 * run.train_seconds + seconds_since(t0);
  const bool ok = aug.max_deviation <= 0.05 && aug.worst_drop < plain.worst_drop && secs < 1200;
  return {ok, fmt("augmented base %.3f worst drop %.3f (%s); no-augment base %.3f worst drop %.3f "
                  "(%s); %.1fs",
                  aug.baseline, aug.worst_drop, aug.where.c_str(), plain.baseline,
                  plain.worst_drop, plain.where.c_str(), secs)};
}

Verdict loss_curve(const DeskRun& run) {
  double at10 = NAN, at2000 = NAN;
  for (const auto& [it, loss] : run.curve) {
    if (it == 10) at10 = loss;
    if (it == 2000) at2000 = loss;
  }
  return {at2000 < 0.25 * at10, fmt("loss at 10 %.4f, at 2000 %.4f, ratio %.3f", at10, at2000,
                                    at2000 / at10)};
}

// ----------------------------------------------------------------- 9

void write_jpeg(const fs::path& path, int h, int w, int quality,
                std::optional<std::string> software = std::nullopt, int recompress = 0) {
  Rng rng(static_cast<std::uint64_t>(h * 7919 + w * 31 + quality));
  jpeg::EncodeOptions o;
  o.quality = quality;
  o.exif_software = software;
  auto bytes = jpeg::encode(smooth_image(h, w, rng), o);
  if (recompress) {
    o.quality = recompress;
    bytes = jpeg::encode(jpeg::decode(bytes), o);
  }
  write_file_atomic(path, bytes);
}

Verdict curation() {
  TempDir dir("accept_curate");
  const auto a = dir / "alpha", b = dir / "beta";
  fs::create_directories(a);
  fs::create_directories(b);
  using R = std::optional<RejectReason>;
  const std::vector<std::pair<std::string, R>> expected{
      {"alpha/a01.jpg", std::nullopt},
      {"alpha/a02.jpg", std::nullopt},
      {"alpha/a03_ps.jpg", RejectReason::SoftwareBlacklist},
      {"alpha/a04_q93.jpg", RejectReason::LowQuality},
      {"alpha/a05_dims.jpg", RejectReason::Dimensions},
      {"alpha/a06_q93.jpg", RejectReason::LowQuality},
      {"beta/b01_rot.jpg", std::nullopt},
      {"beta/b02_ps.jpg", RejectReason::SoftwareBlacklist},
      {"beta/b03_q93.jpg", RejectReason::LowQuality},
      {"beta/b04_dims.jpg", RejectReason::Dimensions},
      {"beta/b05.jpg", std::nullopt},
      {"beta/b06_ps_q93.jpg", RejectReason::SoftwareBlacklist},
  };
  write_jpeg(a / "a01.jpg", 24, 32, 95);
  write_jpeg(a / "a02.jpg", 24, 32, 100, "Camera firmware 1.0");
  write_jpeg(a / "a03_ps.jpg", 24, 32, 98, "Adobe Photoshop CS6 (Macintosh)");
  write_jpeg(a / "a04_q93.jpg", 24, 32, 97, std::nullopt, 93);
  write_jpeg(a / "a05_dims.jpg", 24, 40, 97);
  write_jpeg(a / "a06_q93.jpg", 24, 32, 100, std::nullopt, 93);
  write_jpeg(b / "b01_rot.jpg", 32, 24, 96);
  write_jpeg(b / "b02_ps.jpg", 24, 32, 99, "Adobe Photoshop Lightroom Classic 9.0");
  write_jpeg(b / "b03_q93.jpg", 24, 32, 96, std::nullopt, 93);
  write_jpeg(b / "b04_dims.jpg", 16, 16, 97);
  write_jpeg(b / "b05.jpg", 24, 32, 97);
  write_jpeg(b / "b06_ps_q93.jpg", 24, 32, 98, "Photoshop", 93);

  CurationRules rules;
  rules.dimension_whitelist = {{"alpha", {{32, 24}}}, {"beta", {{32, 24}}}};
  const auto result = curate(dir.path(), rules, {"alpha", "beta"});
  int wrong = 0;
  for (const auto& [rel, reason] : expected) {
    const auto it = std::find_if(result.report.decisions.begin(), result.report.decisions.end(),
                                 [&](const auto& d) { return fs::path(d.path) == dir / rel; });
    if (it == result.report.decisions.end() || it->rejected != reason) {
      ++wrong;
      std::cerr << "curation mismatch: " << rel << "\n";
    }
  }
  wrong += result.report.scanned != 12 || result.report.kept != 4 || result.records.size() != 4;

  Rng rng(9);
  const auto img = smooth_image(40, 56, rng);
  int round_trip = 0;
  for (int q : {70, 80, 90, 95}) {
    jpeg::EncodeOptions o;
    o.quality = q;
    round_trip += jpeg::estimate_quality(jpeg::encode(img, o)) == q;
  }
  return {wrong == 0 && round_trip == 4,
          fmt("12 files, kept %zu, %d wrong decisions, quality round trip %d/4",
              result.report.kept, wrong, round_trip)};
}

// ----------------------------------------------------------------- 10

Verdict reproducibility(const TempDir& dir, const std::string& manifest, const std::string& cfg) {
  // Same desk configuration, shortened so the f64 runs stay quick.
  for (const char* out : {"r1", "r2"}) {
    if (cli_run({"--config", cfg, "--seed", "5", "--workers", "1", "--precision", "f64", "train",
                 "--manifest", manifest, "--out-dir", (dir / out).string(), "--iterations", "40"}) != 0)
      return {false, "train failed"};
  }
  const auto csv1 = read_file(dir / "r1" / "loss.csv"), csv2 = read_file(dir / "r2" / "loss.csv");
  const auto m1 = read_file(dir / "r1" / "model.ckpt"), m2 = read_file(dir / "r2" / "model.ckpt");
  return {csv1 == csv2 && m1 == m2,
          fmt("loss.csv %s (%zu bytes), model.ckpt %s (%zu bytes)", csv1 == csv2 ? "identical" : "DIFFERS",
              csv1.size(), m1 == m2 ? "identical" : "DIFFERS", m1.size())};
}

}  // namespace

int main() {
  const auto t0 = Clock::now();
  std::vector<Verdict> v(11);
  v[1] = gradients();
  v[2] = d4_group();
  v[4] = metric_oracle();
  v[5] = loss_values();
  v[9] = curation();

  TempDir dir("acceptance");
  std::ofstream(dir / "desk.json") << kDeskConfig;
  const auto cfg = (dir / "desk.json").string();
  const auto manifest = (dir / "data" / "manifest.jsonl").string();
  if (cli_run({"--config", cfg, "--seed", "0", "synth", "--out-dir", (dir / "data").string()}) != 0) {
    for (int i : {3, 6, 7, 8, 10}) v[static_cast<std::size_t>(i)] = {false, "synth failed"};
  } else {
    const auto run = desk_run(dir, manifest, cfg);
    if (!run.ok) {
      for (int i : {3, 6, 7, 8}) v[static_cast<std::size_t>(i)] = {false, "training failed"};
    } else {
      double accuracy = 0;
      v[6] = end_to_end(run, accuracy);
      v[3] = tta_invariance(run.augmented, kCrop);
      v[7] = robustness(run);
      v[8] = loss_curve(run);
    }
    v[10] = reproducibility(dir, manifest, cfg);
  }

  const char* names[] = {"",
                         "gradient checks",
                         "D4 group laws",
                         "TTA invariance",
                         "weighted accuracy oracle",
                         "cross-entropy values",
                         "desk-scale end-to-end",
                         "robustness vs no-augment",
                         "loss curve decay",
                         "curation suite",
                         "training reproducibility"};
  bool all = true;
  for (int i = 1; i <= 10; ++i) {
    const auto& r = v[static_cast<std::size_t>(i)];
    all = all && r.pass;
    std::cout << "criterion " << i << " " << (r.pass ? "PASS" : "FAIL") << " " << names[i] << ": "
              << r.detail << "\n";
  }
  std::cout << fmt("total %.1fs\n", seconds_since(t0));
  return all ? 0 : 1;
}
