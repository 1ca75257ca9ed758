#pragma once

#include <atomic>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "camid/dataset.hpp"
#include "camid/image.hpp"
#include "camid/nn/model.hpp"

namespace camid {

struct PredictionVector {
  std::vector<double> probabilities;
  int argmax = 0;
  int num_views = 0;
};

/// Index of the largest value; ties go to the lowest index.
int argmax_lowest(std::span<const double> values);

enum class Averaging { Probability, Logit };

struct TtaOptions {
  /// Five crops (TL, TR, BL, BR, C) or only the center one.
  bool five_crops = true;
  /// All eight dihedral elements or only the identity.
  bool dihedral = true;
  /// Logit averaging takes the softmax of the mean logits.
  Averaging averaging = Averaging::Probability;
};

/// Counts forward-pass views; safe to share between threads.
using ViewCounter = std::atomic<std::size_t>;

/// One forward pass on the whole patch. Throws TooSmall below the model's
/// minimum input size.
template <typename T>
PredictionVector predict_patch(const nn::Model<T>& model, const ImageU8& patch,
                               ViewCounter* counter = nullptr);

/// Mean over crops x dihedral views, in crop order TL, TR, BL, BR, C and
/// kAllD4 order within each crop. Throws TooSmall if the image is smaller
/// than crop x crop.
template <typename T>
PredictionVector tta_predict(const nn::Model<T>& model, const ImageU8& img, int crop,
                             const TtaOptions& options = {}, ViewCounter* counter = nullptr);

struct RecordPrediction {
  ManifestRecord record;
  std::optional<PredictionVector> prediction;
  /// Failure message when prediction is empty.
  std::string error;
};

/// One entry per record, in input order. Read and size failures are recorded
/// per record.
template <typename T>
std::vector<RecordPrediction> predict_manifest(const nn::Model<T>& model,
                                               const std::vector<ManifestRecord>& records,
                                               int crop, const TtaOptions& options = {},
                                               int workers = 1);

/// Header `path,label,altered,pred_class,p0..p{C-1}`; failed records keep
/// their row with empty prediction fields.
std::string predictions_csv(const std::vector<RecordPrediction>& predictions, int classes);

}  // namespace camid
