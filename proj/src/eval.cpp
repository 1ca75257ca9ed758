#include "camid/eval.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <sstream>

#include "camid/error.hpp"
#include "camid/parallel.hpp"

namespace camid {
namespace {

constexpr std::uint64_t kSubsampleTag = 0x61626c6174650000ULL;

void check_lengths(std::size_t a, std::size_t b, const char* what) {
  if (a == 0) throw Error(Errc::EmptyInput, std::string(what) + " needs at least one prediction");
  if (a != b) {
    throw Error(Errc::LengthMismatch, std::string(what) + ": " + std::to_string(a) + " vs " +
                                          std::to_string(b) + " entries");
  }
}

std::string fmt(double v) {
  if (std::isnan(v)) return "nan";
  std::ostringstream os;
  os.precision(9);
  os << v;
  return os.str();
}

AugmentOp sweep_op(SweepTransform t, double param) {
  switch (t) {
    case SweepTransform::Gamma: return GammaOp{param};
    case SweepTransform::Jpeg: return JpegOp{static_cast<int>(param)};
    case SweepTransform::Scale: return ScaleOp{param};
    case SweepTransform::Contrast: return ContrastOp{param};
    case SweepTransform::CropSize: break;
  }
  throw Error(Errc::InvalidParam, "crop size is not an image manipulation");
}

struct Scored {
  int pred = 0;
  int label = 0;
  double loss = 0.0;
};

EvalOutcome tally(const std::vector<std::optional<Scored>>& scored) {
  EvalOutcome out;
  std::size_t correct = 0;
  double loss = 0.0;
  for (const auto& s : scored) {
    if (!s) {
      ++out.n_skipped;
      continue;
    }
    ++out.n_images;
    if (s->pred == s->label) ++correct;
    loss += s->loss;
  }
  if (out.n_images == 0) {
    out.accuracy = out.loss = std::numeric_limits<double>::quiet_NaN();
  } else {
    out.accuracy = static_cast<double>(correct) / static_cast<double>(out.n_images);
    out.loss = loss / static_cast<double>(out.n_images);
  }
  return out;
}

SweepPoint to_point(double param, const EvalOutcome& o) {
  SweepPoint p{param, o.accuracy, o.loss, o.n_images, o.n_skipped, {}};
  if (o.n_images == 0) p.error = "no image could be evaluated";
  return p;
}

}  // namespace

void EvalWeights::validate() const {
  if (!(unaltered > 0.0) || !(altered > 0.0) || !std::isfinite(unaltered) ||
      !std::isfinite(altered)) {
    throw Error(Errc::InvalidParam, "evaluation weights must be positive");
  }
}

double weighted_accuracy(std::span<const int> preds, std::span<const int> labels,
                         const std::vector<bool>& altered, const EvalWeights& weights,
                         bool literal_form) {
  check_lengths(preds.size(), labels.size(), "weighted_accuracy");
  check_lengths(preds.size(), altered.size(), "weighted_accuracy");
  weights.validate();
  double hit = 0.0;
  double total = 0.0;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    const double w = altered[i] ? weights.altered : weights.unaltered;
    if (preds[i] == labels[i]) hit += w;
    total += w;
  }
  const double score = hit / total;
  return literal_form ? score / static_cast<double>(preds.size()) : score;
}

double plain_accuracy(std::span<const int> preds, std::span<const int> labels) {
  check_lengths(preds.size(), labels.size(), "plain_accuracy");
  std::size_t hit = 0;
  for (std::size_t i = 0; i < preds.size(); ++i) hit += preds[i] == labels[i] ? 1 : 0;
  return static_cast<double>(hit) / static_cast<double>(preds.size());
}

double prediction_loss(std::span<const double> probabilities, int label, nn::LossKind kind) {
  const int classes = static_cast<int>(probabilities.size());
  nn::Tensor<double> probs({1, classes},
                           std::vector<double>(probabilities.begin(), probabilities.end()));
  return nn::cross_entropy(probs, nn::one_hot<double>({label}, classes), kind);
}

std::string_view to_string(SweepTransform t) noexcept {
  switch (t) {
    case SweepTransform::Gamma: return "gamma";
    case SweepTransform::Jpeg: return "jpeg";
    case SweepTransform::Scale: return "scale";
    case SweepTransform::Contrast: return "contrast";
    case SweepTransform::CropSize: return "crop";
  }
  return "?";
}

SweepTransform parse_sweep_transform(std::string_view name) {
  for (auto t : {SweepTransform::Gamma, SweepTransform::Jpeg, SweepTransform::Scale,
                 SweepTransform::Contrast, SweepTransform::CropSize}) {
    if (to_string(t) == name) return t;
  }
  throw Error(Errc::InvalidParam, "unknown sweep transform '" + std::string(name) + "'");
}

std::vector<double> default_grid(SweepTransform t) {
  switch (t) {
    case SweepTransform::Gamma: return {0.6, 0.7, 0.8, 0.9, 1.0, 1.1, 1.2, 1.3, 1.4};
    case SweepTransform::Jpeg: return {50, 60, 70, 80, 90, 95};
    case SweepTransform::Scale: return {0.4, 0.5, 0.75, 1.0, 1.5, 2.0, 2.5};
    case SweepTransform::Contrast: return {0.6, 0.8, 1.0, 1.2, 1.4};
    case SweepTransform::CropSize: return {32, 64, 128, 256, 480};
  }
  return {};
}

void SweepSpec::validate() const {
  if (grid.empty()) throw Error(Errc::InvalidParam, "sweep grid is empty");
  for (double v : grid) {
    if (transform == SweepTransform::Jpeg || transform == SweepTransform::CropSize) {
      if (v != std::floor(v)) {
        throw Error(Errc::InvalidParam, std::string(to_string(transform)) +
                                            " grid values must be integers, got " + fmt(v));
      }
    }
    if (transform == SweepTransform::CropSize) {
      if (!(v >= 1.0)) throw Error(Errc::InvalidParam, "crop sizes must be >= 1");
    } else {
      camid::validate(sweep_op(transform, v));
    }
  }
}

std::string SweepResult::csv() const {
  std::string out = "transform,param,accuracy,loss,n_images,n_skipped\n";
  for (const auto& p : points) {
    out += std::string(to_string(transform)) + "," + fmt(p.param) + "," + fmt(p.accuracy) + "," +
           fmt(p.loss) + "," + std::to_string(p.n_images) + "," + std::to_string(p.n_skipped) +
           "\n";
  }
  return out;
}

template <typename T>
EvalOutcome evaluate_images(const nn::Model<T>& model, const std::vector<LabeledImage>& images,
                            int crop, const TtaOptions& options, int workers, nn::LossKind kind) {
  std::vector<std::optional<Scored>> scored(images.size());
  parallel_for(images.size(), workers, [&](std::size_t i) {
    try {
      const auto p = tta_predict(model, images[i].image, crop, options);
      scored[i] = Scored{p.argmax, images[i].label,
                         prediction_loss(p.probabilities, images[i].label, kind)};
    } catch (const Error& e) {
      if (e.code() != Errc::TooSmall) throw;
    }
  });
  return tally(scored);
}

template <typename T>
SweepResult robustness_sweep(const nn::Model<T>& model, const std::vector<LabeledImage>& val,
                             const SweepSpec& spec, int crop, const TtaOptions& options,
                             int workers) {
  spec.validate();
  if (spec.transform == SweepTransform::CropSize) {
    std::vector<int> sizes(spec.grid.begin(), spec.grid.end());
    return crop_size_sweep(model, val, sizes, workers);
  }
  SweepResult result{spec.transform, {}};
  for (double param : spec.grid) {
    const AugmentOp op = sweep_op(spec.transform, param);
    std::vector<std::optional<Scored>> scored(val.size());
    parallel_for(val.size(), workers, [&](std::size_t i) {
      try {
        const auto p = tta_predict(model, apply_op(val[i].image, op), crop, options);
        scored[i] = Scored{p.argmax, val[i].label, prediction_loss(p.probabilities, val[i].label)};
      } catch (const Error&) {
        // counted as skipped
      }
    });
    result.points.push_back(to_point(param, tally(scored)));
  }
  return result;
}

template <typename T>
SweepResult crop_size_sweep(const nn::Model<T>& model, const std::vector<LabeledImage>& val,
                            const std::vector<int>& sizes, int workers) {
  SweepResult result{SweepTransform::CropSize, {}};
  const int min = model.config().min_input_size();
  for (int size : sizes) {
    if (size < min) {
      SweepPoint p;
      p.param = size;
      p.accuracy = p.loss = std::numeric_limits<double>::quiet_NaN();
      p.n_skipped = val.size();
      p.error = "crop " + std::to_string(size) + " is below the model minimum " +
                std::to_string(min);
      result.points.push_back(p);
      continue;
    }
    std::vector<std::optional<Scored>> scored(val.size());
    parallel_for(val.size(), workers, [&](std::size_t i) {
      const auto& img = val[i].image;
      if (img.height() < size || img.width() < size) return;
      const auto p = predict_patch(model, center_crop(img, size));
      scored[i] = Scored{p.argmax, val[i].label, prediction_loss(p.probabilities, val[i].label)};
    });
    auto point = to_point(size, tally(scored));
    if (!point.error.empty()) {
      point.error = "crop " + std::to_string(size) + " exceeds every validation image";
    }
    result.points.push_back(point);
  }
  return result;
}

std::string EvalReport::summary() const {
  std::ostringstream os;
  os << "images evaluated: " << n_images << "\n"
     << "failed: " << n_failed << "\n"
     << "weighted accuracy: " << fmt(weighted_accuracy) << "\n"
     << "accuracy: " << fmt(accuracy) << "\n"
     << "loss: " << fmt(loss) << "\n";
  return os.str();
}

EvalReport summarize(const std::vector<RecordPrediction>& predictions, const EvalWeights& weights,
                     nn::LossKind kind) {
  std::vector<int> preds, labels;
  std::vector<bool> altered;
  EvalReport report;
  double loss = 0.0;
  for (const auto& p : predictions) {
    if (!p.prediction) {
      ++report.n_failed;
      continue;
    }
    preds.push_back(p.prediction->argmax);
    labels.push_back(p.record.class_id);
    altered.push_back(p.record.altered);
    loss += prediction_loss(p.prediction->probabilities, p.record.class_id, kind);
  }
  if (preds.empty()) throw Error(Errc::EmptyInput, "no prediction succeeded");
  report.n_images = preds.size();
  report.weighted_accuracy = weighted_accuracy(preds, labels, altered, weights);
  report.accuracy = plain_accuracy(preds, labels);
  report.loss = loss / static_cast<double>(preds.size());
  return report;
}

template <typename T>
std::vector<AblationPoint> train_size_ablation(const std::vector<ManifestRecord>& manifest,
                                               const std::vector<std::size_t>& sizes,
                                               const TrainConfig& cfg,
                                               const TtaOptions& options) {
  cfg.validate();
  if (sizes.empty()) throw Error(Errc::InvalidParam, "no training-set sizes given");
  const auto train_records = filter_split(manifest, Split::Train);
  for (std::size_t s : sizes) {
    if (s == 0 || s > train_records.size()) {
      throw Error(Errc::InsufficientData, "training-set size " + std::to_string(s) +
                                              " outside [1, " +
                                              std::to_string(train_records.size()) + "]");
    }
  }
  const auto train_loaded = load_images(train_records, 0, cfg.workers);
  const auto val_loaded = load_images(filter_split(manifest, Split::Val), 0, cfg.workers);

  std::vector<AblationPoint> out;
  for (std::size_t s : sizes) {
    std::vector<std::size_t> idx(train_loaded.images.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    Rng rng = Rng::stream(cfg.seed ^ kSubsampleTag, s);
    rng.shuffle(std::span<std::size_t>(idx));
    idx.resize(std::min(s, idx.size()));
    std::sort(idx.begin(), idx.end());
    std::vector<LabeledImage> subset;
    subset.reserve(idx.size());
    for (std::size_t i : idx) subset.push_back(train_loaded.images[i]);

    const auto trained = train<T>(subset, cfg);
    out.push_back({s, evaluate_images(trained.model, val_loaded.images, cfg.train_crop, options,
                                      cfg.workers, cfg.loss)});
  }
  return out;
}

std::string ablation_csv(const std::vector<AblationPoint>& points) {
  std::string out = "train_size,accuracy,loss,n_images,n_skipped\n";
  for (const auto& p : points) {
    out += std::to_string(p.train_size) + "," + fmt(p.validation.accuracy) + "," +
           fmt(p.validation.loss) + "," + std::to_string(p.validation.n_images) + "," +
           std::to_string(p.validation.n_skipped) + "\n";
  }
  return out;
}

#define CAMID_INSTANTIATE(T)                                                                  \
  template EvalOutcome evaluate_images<T>(const nn::Model<T>&, const std::vector<LabeledImage>&, \
                                          int, const TtaOptions&, int, nn::LossKind);         \
  template SweepResult robustness_sweep<T>(const nn::Model<T>&,                               \
                                           const std::vector<LabeledImage>&, const SweepSpec&, \
                                           int, const TtaOptions&, int);                      \
  template SweepResult crop_size_sweep<T>(const nn::Model<T>&,                                \
                                          const std::vector<LabeledImage>&,                   \
                                          const std::vector<int>&, int);                      \
  template std::vector<AblationPoint> train_size_ablation<T>(                                 \
      const std::vector<ManifestRecord>&, const std::vector<std::size_t>&, const TrainConfig&, \
      const TtaOptions&);
CAMID_INSTANTIATE(float)
CAMID_INSTANTIATE(double)
#undef CAMID_INSTANTIATE

}  // namespace camid
