#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "camid/infer.hpp"
#include "camid/train.hpp"

namespace camid {

struct EvalWeights {
  double unaltered = 0.7;
  double altered = 0.3;

  /// Throws InvalidParam unless both weights are positive and finite.
  void validate() const;
};

/// sum_i w_i [pred_i == label_i] / sum_i w_i. With `literal_form` the result
/// is additionally divided by n. Throws EmptyInput, LengthMismatch.
double weighted_accuracy(std::span<const int> preds, std::span<const int> labels,
                         const std::vector<bool>& altered, const EvalWeights& weights = {},
                         bool literal_form = false);

/// Fraction of exact matches. Throws EmptyInput, LengthMismatch.
double plain_accuracy(std::span<const int> preds, std::span<const int> labels);

/// Per-image loss of an averaged probability vector against its label.
double prediction_loss(std::span<const double> probabilities, int label,
                       nn::LossKind kind = nn::LossKind::PerClassBinary);

enum class SweepTransform { Gamma, Jpeg, Scale, Contrast, CropSize };

std::string_view to_string(SweepTransform t) noexcept;
/// Accepts "gamma", "jpeg", "scale", "contrast", "crop"; throws InvalidParam.
SweepTransform parse_sweep_transform(std::string_view name);

/// Training ranges plus out-of-range points on either side.
std::vector<double> default_grid(SweepTransform t);

struct SweepSpec {
  SweepTransform transform = SweepTransform::Gamma;
  std::vector<double> grid;

  /// Throws InvalidParam for an empty grid or a value outside the
  /// transform's domain.
  void validate() const;
};

struct SweepPoint {
  double param = 0.0;
  double accuracy = 0.0;
  double loss = 0.0;
  std::size_t n_images = 0;
  std::size_t n_skipped = 0;
  /// Set when no image could be evaluated at this point.
  std::string error;
};

struct SweepResult {
  SweepTransform transform = SweepTransform::Gamma;
  std::vector<SweepPoint> points;

  /// Header `transform,param,accuracy,loss,n_images,n_skipped`.
  std::string csv() const;
};

struct EvalOutcome {
  double accuracy = 0.0;
  double loss = 0.0;
  std::size_t n_images = 0;
  std::size_t n_skipped = 0;
};

/// TTA accuracy and mean loss over labeled images; images that fail
/// (e.g. TooSmall) are counted as skipped.
template <typename T>
EvalOutcome evaluate_images(const nn::Model<T>& model, const std::vector<LabeledImage>& images,
                            int crop, const TtaOptions& options = {}, int workers = 1,
                            nn::LossKind kind = nn::LossKind::PerClassBinary);

/// Applies each grid manipulation to every image, then evaluates with TTA.
/// Points come back in grid order. CropSize specs are routed to
/// crop_size_sweep.
template <typename T>
SweepResult robustness_sweep(const nn::Model<T>& model, const std::vector<LabeledImage>& val,
                             const SweepSpec& spec, int crop, const TtaOptions& options = {},
                             int workers = 1);

/// Single center view at each size. A size that fits no image (or is below
/// the model minimum) yields a point with `error` set.
template <typename T>
SweepResult crop_size_sweep(const nn::Model<T>& model, const std::vector<LabeledImage>& val,
                            const std::vector<int>& sizes, int workers = 1);

struct EvalReport {
  double weighted_accuracy = 0.0;
  double accuracy = 0.0;
  double loss = 0.0;
  std::size_t n_images = 0;
  std::size_t n_failed = 0;

  std::string summary() const;
};

/// Scores the successful predictions. Throws EmptyInput if none succeeded.
EvalReport summarize(const std::vector<RecordPrediction>& predictions,
                     const EvalWeights& weights = {},
                     nn::LossKind kind = nn::LossKind::PerClassBinary);

struct AblationPoint {
  std::size_t train_size = 0;
  EvalOutcome validation;
};

/// For each size, trains on a seeded subsample of the Train split (kept in
/// manifest order) and evaluates on the Val split with TTA at train_crop.
/// Throws InsufficientData when a size exceeds the available records.
template <typename T>
std::vector<AblationPoint> train_size_ablation(const std::vector<ManifestRecord>& manifest,
                                               const std::vector<std::size_t>& sizes,
                                               const TrainConfig& cfg,
                                               const TtaOptions& options = {});

/// Header `train_size,accuracy,loss,n_images,n_skipped`.
std::string ablation_csv(const std::vector<AblationPoint>& points);

}  // namespace camid
