#include "camid/infer.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "camid/error.hpp"
#include "camid/io.hpp"
#include "camid/parallel.hpp"
#include "camid/train.hpp"

namespace camid {
namespace {

// Views per forward call; bounds activation memory at large crops.
constexpr std::size_t kPixelsPerChunk = 1 << 18;

template <typename T>
void check_patch(const nn::Model<T>& model, int h, int w) {
  const int min = model.config().min_input_size();
  if (h < min || w < min) {
    throw Error(Errc::TooSmall, "patch " + std::to_string(h) + "x" + std::to_string(w) +
                                    " is below the model minimum " + std::to_string(min));
  }
}

std::vector<double> softmax_row(std::span<const double> logits) {
  const double mx = *std::max_element(logits.begin(), logits.end());
  std::vector<double> out(logits.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    out[i] = std::exp(logits[i] - mx);
    sum += out[i];
  }
  for (auto& v : out) v /= sum;
  return out;
}

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(9);
  os << v;
  return os.str();
}

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

}  // namespace

int argmax_lowest(std::span<const double> values) {
  if (values.empty()) throw Error(Errc::EmptyInput, "argmax of an empty vector");
  std::size_t best = 0;
  for (std::size_t i = 1; i < values.size(); ++i) {
    if (values[i] > values[best]) best = i;
  }
  return static_cast<int>(best);
}

template <typename T>
PredictionVector predict_patch(const nn::Model<T>& model, const ImageU8& patch,
                               ViewCounter* counter) {
  check_patch(model, patch.height(), patch.width());
  const auto probs = model.forward(to_tensor<T>({patch}));
  if (counter != nullptr) counter->fetch_add(1);
  PredictionVector out;
  out.probabilities.assign(probs.values().begin(), probs.values().end());
  out.argmax = argmax_lowest(out.probabilities);
  out.num_views = 1;
  return out;
}

template <typename T>
PredictionVector tta_predict(const nn::Model<T>& model, const ImageU8& img, int crop,
                             const TtaOptions& options, ViewCounter* counter) {
  if (crop < 1 || img.height() < crop || img.width() < crop) {
    throw Error(Errc::TooSmall, "image " + std::to_string(img.height()) + "x" +
                                    std::to_string(img.width()) + " cannot hold a " +
                                    std::to_string(crop) + " crop");
  }
  check_patch(model, crop, crop);

  std::vector<ImageU8> crops;
  if (options.five_crops) {
    crops = tta_crops(img, crop);
  } else {
    crops.push_back(center_crop(img, crop));
  }
  std::vector<ImageU8> views;
  for (const auto& c : crops) {
    if (options.dihedral) {
      for (D4 g : kAllD4) views.push_back(d4_apply(c, g));
    } else {
      views.push_back(c);
    }
  }

  const int classes = model.config().num_classes;
  const std::size_t chunk = std::clamp<std::size_t>(
      kPixelsPerChunk / (static_cast<std::size_t>(crop) * crop), 1, views.size());
  std::vector<double> acc(static_cast<std::size_t>(classes), 0.0);
  for (std::size_t start = 0; start < views.size(); start += chunk) {
    const std::size_t end = std::min(views.size(), start + chunk);
    std::vector<ImageU8> part(views.begin() + static_cast<std::ptrdiff_t>(start),
                              views.begin() + static_cast<std::ptrdiff_t>(end));
    const auto input = to_tensor<T>(part);
    const auto out = options.averaging == Averaging::Probability ? model.forward(input)
                                                                 : model.logits(input);
    if (counter != nullptr) counter->fetch_add(end - start);
    for (std::size_t v = 0; v < end - start; ++v) {
      for (int c = 0; c < classes; ++c) {
        acc[static_cast<std::size_t>(c)] += static_cast<double>(out.at(static_cast<int>(v), c));
      }
    }
  }
  for (auto& a : acc) a /= static_cast<double>(views.size());

  PredictionVector result;
  result.probabilities = options.averaging == Averaging::Probability ? acc : softmax_row(acc);
  result.argmax = argmax_lowest(result.probabilities);
  result.num_views = static_cast<int>(views.size());
  return result;
}

template <typename T>
std::vector<RecordPrediction> predict_manifest(const nn::Model<T>& model,
                                               const std::vector<ManifestRecord>& records,
                                               int crop, const TtaOptions& options, int workers) {
  std::vector<RecordPrediction> out(records.size());
  parallel_for(records.size(), workers, [&](std::size_t i) {
    out[i].record = records[i];
    try {
      out[i].prediction = tta_predict(model, read_image(records[i].path), crop, options);
    } catch (const std::exception& e) {
      out[i].error = e.what();
    }
  });
  return out;
}

std::string predictions_csv(const std::vector<RecordPrediction>& predictions, int classes) {
  std::string out = "path,label,altered,pred_class";
  for (int c = 0; c < classes; ++c) out += ",p" + std::to_string(c);
  out += "\n";
  for (const auto& p : predictions) {
    out += csv_field(p.record.path) + "," + std::to_string(p.record.class_id) + "," +
           (p.record.altered ? "1" : "0") + ",";
    if (p.prediction) {
      out += std::to_string(p.prediction->argmax);
      for (double v : p.prediction->probabilities) out += "," + fmt(v);
    } else {
      for (int c = 0; c < classes; ++c) out += ",";
    }
    out += "\n";
  }
  return out;
}

#define CAMID_INSTANTIATE(T)                                                                  \
  template PredictionVector predict_patch<T>(const nn::Model<T>&, const ImageU8&,             \
                                             ViewCounter*);                                   \
  template PredictionVector tta_predict<T>(const nn::Model<T>&, const ImageU8&, int,          \
                                           const TtaOptions&, ViewCounter*);                  \
  template std::vector<RecordPrediction> predict_manifest<T>(                                 \
      const nn::Model<T>&, const std::vector<ManifestRecord>&, int, const TtaOptions&, int);
CAMID_INSTANTIATE(float)
CAMID_INSTANTIATE(double)
#undef CAMID_INSTANTIATE

}  // namespace camid
