#include "cli.hpp"

#include <CLI11.hpp>

#include <chrono>
#include <filesystem>
#include <optional>
#include <sstream>

#include "camid/config.hpp"
#include "camid/dataset.hpp"
#include "camid/error.hpp"
#include "camid/eval.hpp"
#include "camid/infer.hpp"
#include "camid/io.hpp"
#include "camid/nn/checkpoint.hpp"
#include "camid/nn/gradcheck.hpp"
#include "camid/synth.hpp"
#include "camid/train.hpp"

namespace camid::cli {
namespace {

namespace fs = std::filesystem;

struct Globals {
  std::string config_path;
  std::uint64_t seed = 0;
  int workers = 1;
  std::string precision;
  bool dump_config = false;
  CLI::Option* seed_opt = nullptr;
  CLI::Option* workers_opt = nullptr;
  CLI::Option* precision_opt = nullptr;
};

struct Args {
  std::string root, out, out_dir, manifest, checkpoint, report, split = "all", transform;
  std::vector<std::string> classes;
  std::vector<double> grid;
  int val_per_class = 0, crop = 0, iterations = 0, batch_size = 0, pre_crop = 0,
      train_crop = 0, seeds = 20;
  double learning_rate = 0.0, h = 1e-5;
  bool no_augment = false;
  std::map<std::string, CLI::Option*> opts;

  bool given(const std::string& name) const {
    auto it = opts.find(name);
    return it != opts.end() && it->second->count() > 0;
  }
};

class Tool {
 public:
  Tool(std::ostream& out, std::ostream& err) : out_(out), err_(err) {}

  int curate(const RunConfig& cfg, const Args& a) {
    auto result = camid::curate(a.root, cfg.curation, a.classes, cfg.workers);
    const std::string summary = result.report.summary();
    out_ << summary;
    if (!a.report.empty()) {
      std::string text = summary;
      for (const auto& d : result.report.decisions) {
        text += d.path + "," + (d.rejected ? std::string(to_string(*d.rejected)) : "kept") + "\n";
      }
      write_file_atomic(a.report, std::string_view(text));
    }
    if (result.records.empty()) {
      err_ << "error: every file was rejected; no manifest written\n";
      return kExitEmpty;
    }
    write_manifest(a.out, result.records);
    return kExitOk;
  }

  int split(const RunConfig& cfg, const Args& a) {
    const int per_class = a.given("--val-per-class") ? a.val_per_class : cfg.val_per_class;
    auto records = camid::split(read_manifest(a.manifest), per_class, cfg.seed);
    write_manifest(a.out, records);
    out_ << "wrote " << records.size() << " records to " << a.out << "\n";
    return kExitOk;
  }

  int build_eval(const RunConfig& cfg, const Args& a) {
    auto sources = select(read_manifest(a.manifest), a.split == "all" ? "val" : a.split);
    EvalSetOptions options = cfg.eval_set;
    if (a.given("--crop")) options.crop = a.crop;
    auto result = build_eval_set(sources, cfg.seed, a.out_dir, options, cfg.workers);
    for (const auto& [path, reason] : result.skipped) err_ << "skipped " << path << ": " << reason << "\n";
    write_manifest(a.out, result.records);
    out_ << "wrote " << result.records.size() << " eval records, skipped " << result.skipped.size()
         << "\n";
    return kExitOk;
  }

  template <typename T>
  int train(RunConfig cfg, const Args& a) {
    const auto records = read_manifest(a.manifest);
    auto& t = cfg.train;
    if (a.given("--iterations")) t.iterations = a.iterations;
    if (a.given("--batch-size")) t.batch_size = a.batch_size;
    if (a.given("--pre-crop")) t.pre_crop = a.pre_crop;
    if (a.given("--train-crop")) t.train_crop = a.train_crop;
    if (a.given("--learning-rate")) t.learning_rate = a.learning_rate;
    if (a.no_augment) t.augment = false;
    t.model.num_classes = class_count(records);
    fs::create_directories(a.out_dir);
    const fs::path ckpt = fs::path(a.out_dir) / "model.ckpt";
    t.checkpoint_path = ckpt;

    const auto start = std::chrono::steady_clock::now();
    auto result = camid::train<T>(records, t, [&](int it, double loss) {
      const double secs =
          std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
      err_ << "iteration " << it << " loss " << loss << " (" << secs << " s)\n";
    });
    if (result.skipped_images > 0) {
      err_ << "warning: skipped " << result.skipped_images << " images smaller than pre_crop "
           << t.pre_crop << "\n";
    }
    nn::save_checkpoint(result.model, ckpt);
    write_file_atomic(fs::path(a.out_dir) / "loss.csv", std::string_view(result.curve.csv()));
    out_ << "wrote " << ckpt.string() << " and " << (fs::path(a.out_dir) / "loss.csv").string()
         << "\n";
    return kExitOk;
  }

  template <typename T>
  int predict(const RunConfig& cfg, const Args& a) {
    const auto model = nn::load_checkpoint<T>(a.checkpoint);
    const auto records = select(read_manifest(a.manifest), a.split);
    check_classes(model, records);
    const auto preds = predict_manifest(model, records, crop(cfg, a), cfg.infer.tta, cfg.workers);
    report_failures(preds);
    write_file_atomic(a.out, std::string_view(predictions_csv(preds, model.config().num_classes)));
    out_ << "wrote " << preds.size() << " predictions to " << a.out << "\n";
    return kExitOk;
  }

  template <typename T>
  int evaluate(const RunConfig& cfg, const Args& a) {
    const auto model = nn::load_checkpoint<T>(a.checkpoint);
    const auto records = select(read_manifest(a.manifest), a.split);
    check_classes(model, records);
    const auto preds = predict_manifest(model, records, crop(cfg, a), cfg.infer.tta, cfg.workers);
    report_failures(preds);
    const auto report = summarize(preds, cfg.weights, cfg.train.loss);
    std::ostringstream os;
    os.precision(6);
    os << std::fixed << "weighted_accuracy=" << report.weighted_accuracy << "\n"
       << "accuracy=" << report.accuracy << "\n"
       << "loss=" << report.loss << "\n"
       << "n_images=" << report.n_images << "\n"
       << "n_failed=" << report.n_failed << "\n";
    out_ << os.str();
    if (!a.out.empty()) write_file_atomic(a.out, std::string_view(os.str()));
    return kExitOk;
  }

  template <typename T>
  int ablate(const RunConfig& cfg, const Args& a) {
    const auto records = read_manifest(a.manifest);
    if (a.transform == "train-size") {
      std::vector<std::size_t> sizes = cfg.ablate.train_sizes;
      if (!a.grid.empty()) sizes.assign(a.grid.begin(), a.grid.end());
      TrainConfig t = cfg.train;
      t.model.num_classes = class_count(records);
      const auto points = train_size_ablation<T>(records, sizes, t, cfg.infer.tta);
      write_file_atomic(a.out, std::string_view(ablation_csv(points)));
      out_ << ablation_csv(points);
      return kExitOk;
    }
    if (a.checkpoint.empty()) throw Error(Errc::InvalidParam, "--checkpoint is required");
    const auto model = nn::load_checkpoint<T>(a.checkpoint);
    const auto val = select(records, a.split == "all" ? "val" : a.split);
    check_classes(model, val);
    const auto transform = parse_sweep_transform(a.transform);
    SweepSpec spec{transform, a.grid.empty() ? config_grid(cfg, transform) : a.grid};
    const auto loaded = load_images(val, 0, cfg.workers);
    for (const auto& [path, reason] : loaded.skipped) err_ << "skipped " << path << ": " << reason << "\n";
    const auto result = robustness_sweep(model, loaded.images, spec, crop(cfg, a), cfg.infer.tta,
                                         cfg.workers);
    write_file_atomic(a.out, std::string_view(result.csv()));
    out_ << result.csv();
    return kExitOk;
  }

  int gradcheck(const Args& a, std::uint64_t seed) {
    int failures = 0;
    for (int s = 0; s < a.seeds; ++s) {
      for (const auto& e : nn::gradient_suite(seed + static_cast<std::uint64_t>(s), a.h)) {
        if (!e.passed()) {
          ++failures;
          out_ << "FAIL seed " << seed + s << " " << e.name << " rel_error " << e.max_rel_error
               << " tolerance " << e.tolerance << "\n";
        }
      }
    }
    out_ << (failures == 0 ? "gradient checks passed" : "gradient checks failed") << " over "
         << a.seeds << " seeds\n";
    return failures == 0 ? kExitOk : kExitError;
  }

  int synth(RunConfig cfg, const Args& a) {
    cfg.synth.seed = cfg.seed;
    const auto records = make_synthetic_dataset(cfg.synth, a.out_dir, cfg.workers);
    out_ << "wrote " << records.size() << " images and "
         << (fs::path(a.out_dir) / "manifest.jsonl").string() << "\n";
    return kExitOk;
  }

 private:
  static std::vector<ManifestRecord> select(const std::vector<ManifestRecord>& records,
                                            const std::string& split) {
    if (split == "all") return records;
    return filter_split(records, parse_split(split));
  }

  static int crop(const RunConfig& cfg, const Args& a) {
    return a.given("--crop") ? a.crop : cfg.infer_crop();
  }

  static std::vector<double> config_grid(const RunConfig& cfg, SweepTransform t) {
    switch (t) {
      case SweepTransform::Gamma: return cfg.ablate.gamma_grid;
      case SweepTransform::Jpeg: return cfg.ablate.jpeg_grid;
      case SweepTransform::Scale: return cfg.ablate.scale_grid;
      case SweepTransform::Contrast: return cfg.ablate.contrast_grid;
      case SweepTransform::CropSize: return cfg.ablate.crop_grid;
    }
    return {};
  }

  template <typename T>
  static void check_classes(const nn::Model<T>& model, const std::vector<ManifestRecord>& records) {
    const int c = model.config().num_classes;
    if (records.empty()) throw Error(Errc::EmptyInput, "the manifest selection is empty");
    const int m = class_count(records);
    if (m != c) {
      throw Error(Errc::ShapeMismatch, "class-count mismatch: checkpoint has " +
                                           std::to_string(c) + " classes, manifest has " +
                                           std::to_string(m));
    }
  }

  void report_failures(const std::vector<RecordPrediction>& preds) {
    for (const auto& p : preds) {
      if (!p.prediction) err_ << "failed " << p.record.path << ": " << p.error << "\n";
    }
  }

  std::ostream& out_;
  std::ostream& err_;
};

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Camera-model identification pipeline", "camid"};
  app.fallthrough();
  app.require_subcommand(0, 1);
  Globals g;
  app.add_option("--config", g.config_path, "JSON run configuration")->check(CLI::ExistingFile);
  g.seed_opt = app.add_option("--seed", g.seed, "Seed for every random choice");
  g.workers_opt = app.add_option("--workers", g.workers, "Worker threads (1 is bit-reproducible)")
                      ->check(CLI::PositiveNumber);
  g.precision_opt = app.add_option("--precision", g.precision, "Network precision")
                        ->check(CLI::IsMember({"f32", "f64"}));
  app.add_flag("--dump-config", g.dump_config, "Print the effective configuration and exit");

  Args a;
  auto opt = [&](CLI::App* sub, const std::string& name, auto& var, const std::string& help) {
    auto* o = sub->add_option(name, var, help);
    a.opts[name] = o;
    return o;
  };
  const std::vector<std::string> splits{"all", "train", "val", "eval"};

  auto* synth = app.add_subcommand("synth", "Write the synthetic camera-trace dataset");
  opt(synth, "--out-dir", a.out_dir, "Output directory")->required();

  auto* curate = app.add_subcommand("curate", "Filter a root/<class>/ corpus into a manifest");
  opt(curate, "--root", a.root, "Corpus root")->required();
  opt(curate, "--out", a.out, "Manifest to write")->required();
  opt(curate, "--report", a.report, "Per-file decision report to write");
  opt(curate, "--classes", a.classes, "Class directory names in label order")->delimiter(',');

  auto* split = app.add_subcommand("split", "Assign train/val splits per class");
  opt(split, "--manifest", a.manifest, "Input manifest")->required();
  opt(split, "--out", a.out, "Manifest to write")->required();
  opt(split, "--val-per-class", a.val_per_class, "Validation records per class");

  auto* build_eval = app.add_subcommand("build-eval", "Build the center-cropped evaluation set");
  opt(build_eval, "--manifest", a.manifest, "Source manifest")->required();
  opt(build_eval, "--split", a.split, "Source split (default val)")->check(CLI::IsMember(splits));
  opt(build_eval, "--out-dir", a.out_dir, "Image output directory")->required();
  opt(build_eval, "--out", a.out, "Manifest to write")->required();
  opt(build_eval, "--crop", a.crop, "Center crop side");

  auto* train = app.add_subcommand("train", "Train a model");
  opt(train, "--manifest", a.manifest, "Manifest with train records")->required();
  opt(train, "--out-dir", a.out_dir, "Receives model.ckpt and loss.csv")->required();
  opt(train, "--iterations", a.iterations, "Optimizer steps");
  opt(train, "--batch-size", a.batch_size, "Examples per step");
  opt(train, "--pre-crop", a.pre_crop, "First random crop side");
  opt(train, "--train-crop", a.train_crop, "Final patch side");
  opt(train, "--learning-rate", a.learning_rate, "Adam learning rate");
  train->add_flag("--no-augment", a.no_augment, "Disable every augmentation");

  auto* predict = app.add_subcommand("predict", "Write TTA predictions for a manifest");
  opt(predict, "--checkpoint", a.checkpoint, "Model checkpoint")->required();
  opt(predict, "--manifest", a.manifest, "Records to predict")->required();
  opt(predict, "--out", a.out, "Predictions CSV")->required();
  opt(predict, "--split", a.split, "Records to use")->check(CLI::IsMember(splits));
  opt(predict, "--crop", a.crop, "View side");

  auto* evaluate = app.add_subcommand("evaluate", "Score a manifest (weighted and plain accuracy)");
  opt(evaluate, "--checkpoint", a.checkpoint, "Model checkpoint")->required();
  opt(evaluate, "--manifest", a.manifest, "Records to score")->required();
  opt(evaluate, "--out", a.out, "Also write the summary here");
  opt(evaluate, "--split", a.split, "Records to use")->check(CLI::IsMember(splits));
  opt(evaluate, "--crop", a.crop, "View side");

  auto* ablate = app.add_subcommand("ablate", "Robustness, crop-size or train-size sweep");
  opt(ablate, "--manifest", a.manifest, "Manifest with val (and train) records")->required();
  opt(ablate, "--transform", a.transform, "Sweep kind")
      ->required()
      ->check(CLI::IsMember({"gamma", "jpeg", "scale", "contrast", "crop", "train-size"}));
  opt(ablate, "--checkpoint", a.checkpoint, "Model checkpoint (not for train-size)");
  opt(ablate, "--grid", a.grid, "Comma-separated grid (default from config)")->delimiter(',');
  opt(ablate, "--out", a.out, "Sweep CSV")->required();
  opt(ablate, "--split", a.split, "Records to sweep (default val)")->check(CLI::IsMember(splits));
  opt(ablate, "--crop", a.crop, "View side");

  auto* gradcheck = app.add_subcommand("gradcheck", "Finite-difference gradient checks");
  opt(gradcheck, "--seeds", a.seeds, "Number of seeds")->check(CLI::PositiveNumber);
  opt(gradcheck, "--step", a.h, "Central-difference step");

  std::vector<const char*> argv;
  for (const auto& s : args) argv.push_back(s.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitError;
  }

  try {
    RunConfig cfg = g.config_path.empty() ? RunConfig{} : load_run_config(g.config_path);
    if (g.seed_opt->count()) cfg.seed = g.seed;
    if (g.workers_opt->count()) cfg.workers = g.workers;
    if (g.precision_opt->count()) cfg.precision = g.precision;
    cfg.train.seed = cfg.seed;
    cfg.train.workers = cfg.workers;
    cfg.synth.seed = cfg.seed;
    cfg.validate();

    if (g.dump_config) {
      out << to_json(cfg).dump(2) << "\n";
      return kExitOk;
    }
    Tool tool(out, err);
    const bool f64 = cfg.precision == "f64";
    if (synth->parsed()) return tool.synth(cfg, a);
    if (curate->parsed()) return tool.curate(cfg, a);
    if (split->parsed()) return tool.split(cfg, a);
    if (build_eval->parsed()) return tool.build_eval(cfg, a);
    if (train->parsed()) return f64 ? tool.train<double>(cfg, a) : tool.train<float>(cfg, a);
    if (predict->parsed()) return f64 ? tool.predict<double>(cfg, a) : tool.predict<float>(cfg, a);
    if (evaluate->parsed()) {
      return f64 ? tool.evaluate<double>(cfg, a) : tool.evaluate<float>(cfg, a);
    }
    if (ablate->parsed()) return f64 ? tool.ablate<double>(cfg, a) : tool.ablate<float>(cfg, a);
    if (gradcheck->parsed()) return tool.gradcheck(a, cfg.seed);
    err << app.help();
    return kExitError;
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return kExitError;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitError;
  }
}

}  // namespace camid::cli
