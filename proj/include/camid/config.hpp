#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "camid/dataset.hpp"
#include "camid/eval.hpp"
#include "camid/infer.hpp"
#include "camid/synth.hpp"
#include "camid/train.hpp"

namespace camid {

struct InferSettings {
  /// Crop side for test-time views; 0 means train.train_crop.
  int crop = 0;
  TtaOptions tta;
};

struct AblateSettings {
  std::vector<double> gamma_grid = default_grid(SweepTransform::Gamma);
  std::vector<double> jpeg_grid = default_grid(SweepTransform::Jpeg);
  std::vector<double> scale_grid = default_grid(SweepTransform::Scale);
  std::vector<double> contrast_grid = default_grid(SweepTransform::Contrast);
  std::vector<double> crop_grid = default_grid(SweepTransform::CropSize);
  std::vector<std::size_t> train_sizes{200, 400, 800};
};

/// Everything the command-line tool reads from its --config file. Keys
/// mirror the field names; unknown keys are rejected by their dotted path.
struct RunConfig {
  std::uint64_t seed = 0;
  int workers = 1;
  /// "f32" or "f64".
  std::string precision = "f32";
  CurationRules curation;
  int val_per_class = 20;
  EvalSetOptions eval_set;
  TrainConfig train;
  InferSettings infer;
  EvalWeights weights;
  AblateSettings ablate;
  SynthOptions synth;

  /// Throws ConfigError describing the first invalid value.
  void validate() const;
  int infer_crop() const { return infer.crop > 0 ? infer.crop : train.train_crop; }
};

nlohmann::json to_json(const RunConfig& config);
/// Missing keys keep their defaults. Throws ConfigError naming unknown keys
/// and mistyped values.
RunConfig run_config_from_json(const nlohmann::json& j);
/// Throws IoError or ConfigError.
RunConfig load_run_config(const std::filesystem::path& path);

}  // namespace camid
