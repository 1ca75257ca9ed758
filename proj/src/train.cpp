#include "camid/train.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "camid/error.hpp"
#include "camid/io.hpp"
#include "camid/nn/checkpoint.hpp"
#include "camid/parallel.hpp"

namespace camid {
namespace {

constexpr std::uint64_t kShuffleTag = 0x73687566666c6500ULL;

void require(bool ok, const std::string& what) {
  if (!ok) throw Error(Errc::InvalidParam, what);
}

std::string fmt_loss(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

}  // namespace

void TrainConfig::validate() const {
  require(train_crop >= 1, "train_crop must be positive");
  require(pre_crop >= train_crop, "pre_crop must be >= train_crop");
  require(batch_size >= 1, "batch_size must be >= 1");
  require(iterations >= 0, "iterations must be >= 0");
  require(std::isfinite(learning_rate) && learning_rate > 0.0, "learning_rate must be > 0");
  require(lr_decay_every >= 0, "lr_decay_every must be >= 0");
  require(std::isfinite(lr_decay_factor) && lr_decay_factor > 0.0, "lr_decay_factor must be > 0");
  require(log_every >= 1, "log_every must be >= 1");
  require(checkpoint_every >= 0, "checkpoint_every must be >= 0");
  require(workers >= 1, "workers must be >= 1");
  policy.validate();
  model.validate();
  require(train_crop >= model.min_input_size(),
          "train_crop " + std::to_string(train_crop) + " is below the model minimum " +
              std::to_string(model.min_input_size()));
}

std::vector<AugmentOp> sample_patch_ops(const TrainConfig& cfg, Rng& rng) {
  if (!cfg.augment) return {};
  auto ops = sample_train_augs(cfg.policy, rng);
  for (auto& op : ops) {
    auto* s = std::get_if<ScaleOp>(&op);
    if (s == nullptr) continue;
    if (std::nearbyint(s->factor * cfg.pre_crop) < cfg.train_crop) {
      const double lo = std::max(static_cast<double>(cfg.train_crop) / cfg.pre_crop,
                                 cfg.policy.scale_range[0]);
      s->factor = rng.uniform(lo, cfg.policy.scale_range[1]);
      // uniform() may land a hair under lo's rounding boundary
      if (std::nearbyint(s->factor * cfg.pre_crop) < cfg.train_crop) s->factor = lo;
    }
  }
  return ops;
}

ImageU8 make_training_patch(const ImageU8& img, const TrainConfig& cfg, Rng& rng) {
  if (img.height() < cfg.pre_crop || img.width() < cfg.pre_crop) {
    throw Error(Errc::TooSmall, "image " + std::to_string(img.height()) + "x" +
                                    std::to_string(img.width()) + " is smaller than pre_crop " +
                                    std::to_string(cfg.pre_crop));
  }
  ImageU8 pre = random_crop(img, cfg.pre_crop, rng);
  const auto ops = sample_patch_ops(cfg, rng);
  ImageU8 mid = apply_ops(pre, ops);
  return random_crop(mid, cfg.train_crop, rng);
}

template <typename T>
nn::Tensor<T> to_tensor(const std::vector<ImageU8>& images) {
  if (images.empty()) throw Error(Errc::EmptyInput, "to_tensor needs at least one image");
  const int h = images.front().height();
  const int w = images.front().width();
  nn::Tensor<T> out({static_cast<int>(images.size()), 3, h, w});
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  for (std::size_t n = 0; n < images.size(); ++n) {
    const auto& img = images[n];
    if (img.height() != h || img.width() != w) {
      throw Error(Errc::ShapeMismatch, "to_tensor needs images of one size");
    }
    const auto src = img.data();
    T* dst = out.data() + n * 3 * plane;
    for (std::size_t p = 0; p < plane; ++p) {
      for (std::size_t c = 0; c < 3; ++c) dst[c * plane + p] = static_cast<T>(src[p * 3 + c]) / T(255);
    }
  }
  return out;
}

template <typename T>
std::pair<nn::Tensor<T>, int> make_training_example(const ImageU8& img, int class_id,
                                                    const TrainConfig& cfg, Rng& rng) {
  auto t = to_tensor<T>({make_training_patch(img, cfg, rng)});
  const int c = t.dim(1), h = t.dim(2), w = t.dim(3);
  return {nn::Tensor<T>({c, h, w}, std::vector<T>(t.values().begin(), t.values().end())), class_id};
}

std::string LossCurve::csv() const {
  std::string out = "iteration,loss\n";
  for (const auto& [it, loss] : points) out += std::to_string(it) + "," + fmt_loss(loss) + "\n";
  return out;
}

LoadResult load_images(const std::vector<ManifestRecord>& records, int min_side, int workers) {
  std::vector<std::optional<ImageU8>> images(records.size());
  std::vector<std::string> reasons(records.size());
  parallel_for(records.size(), workers, [&](std::size_t i) {
    try {
      ImageU8 img = read_image(records[i].path);
      if (min_side > 0 && (img.height() < min_side || img.width() < min_side)) {
        reasons[i] = "smaller than " + std::to_string(min_side) + "x" + std::to_string(min_side);
        return;
      }
      images[i] = std::move(img);
    } catch (const std::exception& e) {
      reasons[i] = e.what();
    }
  });
  LoadResult out;
  for (std::size_t i = 0; i < records.size(); ++i) {
    if (images[i]) {
      out.images.push_back({std::move(*images[i]), records[i].class_id});
      out.records.push_back(records[i]);
    } else {
      out.skipped.emplace_back(records[i].path, reasons[i]);
    }
  }
  return out;
}

template <typename T>
TrainResult<T> train(const std::vector<LabeledImage>& examples, const TrainConfig& cfg,
                     const ProgressFn& progress) {
  cfg.validate();
  const int classes = cfg.model.num_classes;

  std::vector<std::size_t> usable;
  std::vector<std::size_t> per_class(static_cast<std::size_t>(classes), 0);
  std::size_t skipped = 0;
  for (std::size_t i = 0; i < examples.size(); ++i) {
    const auto& ex = examples[i];
    if (ex.label < 0 || ex.label >= classes) {
      throw Error(Errc::InvalidParam, "label " + std::to_string(ex.label) + " outside [0, " +
                                          std::to_string(classes) + ")");
    }
    if (ex.image.height() < cfg.pre_crop || ex.image.width() < cfg.pre_crop) {
      ++skipped;
      continue;
    }
    usable.push_back(i);
    ++per_class[static_cast<std::size_t>(ex.label)];
  }
  for (int c = 0; c < classes; ++c) {
    if (per_class[static_cast<std::size_t>(c)] == 0) {
      throw Error(Errc::InsufficientData,
                  "class " + std::to_string(c) + " has no usable training images");
    }
  }

  TrainResult<T> result{nn::Model<T>(cfg.model), {}, skipped};
  auto& model = result.model;
  model.initialize(cfg.seed);
  auto state = nn::AdamState<T>::zeros_like(model.parameters());

  const std::size_t n = usable.size();
  const auto batch = static_cast<std::size_t>(cfg.batch_size);
  std::vector<std::size_t> order;
  std::uint64_t order_epoch = UINT64_MAX;
  auto example_at = [&](std::uint64_t g) {
    const std::uint64_t epoch = g / n;
    if (epoch != order_epoch) {
      order.assign(usable.begin(), usable.end());
      Rng rng = Rng::stream(cfg.seed ^ kShuffleTag, epoch);
      rng.shuffle(std::span<std::size_t>(order));
      order_epoch = epoch;
    }
    return order[g % n];
  };

  std::vector<ImageU8> patches(batch, ImageU8(1, 1));
  std::vector<std::size_t> picked(batch);
  std::vector<int> labels(batch);
  double window_sum = 0.0;
  int window_count = 0;
  for (int it = 0; it < cfg.iterations; ++it) {
    const std::uint64_t first = static_cast<std::uint64_t>(it) * batch;
    for (std::size_t j = 0; j < batch; ++j) {
      picked[j] = example_at(first + j);
      labels[j] = examples[picked[j]].label;
    }
    parallel_for(batch, cfg.workers, [&](std::size_t j) {
      Rng rng = Rng::stream(cfg.seed, first + j);
      patches[j] = make_training_patch(examples[picked[j]].image, cfg, rng);
    });
    const auto input = to_tensor<T>(patches);
    const auto target = nn::one_hot<T>(labels, classes);
    auto lg = model.loss_and_gradients(input, target, cfg.loss);

    nn::AdamConfig adam;
    adam.learning_rate = cfg.learning_rate;
    if (cfg.lr_decay_every > 0) {
      adam.learning_rate *= std::pow(cfg.lr_decay_factor, it / cfg.lr_decay_every);
    }
    try {
      if (!std::isfinite(lg.loss)) throw Error(Errc::NonFiniteGradient, "loss is not finite");
      nn::adam_step(model.parameters(), lg.grads, state, adam);
    } catch (const Error& e) {
      if (e.code() != Errc::NonFiniteGradient) throw;
      throw Error(Errc::NonFiniteGradient,
                  "iteration " + std::to_string(it + 1) + ": " + e.what());
    }

    window_sum += lg.loss;
    ++window_count;
    const int done = it + 1;
    if (done % cfg.log_every == 0 || done == cfg.iterations) {
      const double mean = window_sum / window_count;
      result.curve.points.emplace_back(done, mean);
      if (progress) progress(done, mean);
      window_sum = 0.0;
      window_count = 0;
    }
    if (cfg.checkpoint_every > 0 && !cfg.checkpoint_path.empty() &&
        done % cfg.checkpoint_every == 0) {
      nn::save_checkpoint(model, cfg.checkpoint_path);
    }
  }
  return result;
}

template <typename T>
TrainResult<T> train(const std::vector<ManifestRecord>& records, const TrainConfig& cfg,
                     const ProgressFn& progress) {
  cfg.validate();
  auto loaded = load_images(filter_split(records, Split::Train), cfg.pre_crop, cfg.workers);
  auto result = train<T>(loaded.images, cfg, progress);
  result.skipped_images += loaded.skipped.size();
  return result;
}

#define CAMID_INSTANTIATE(T)                                                                   \
  template nn::Tensor<T> to_tensor<T>(const std::vector<ImageU8>&);                            \
  template std::pair<nn::Tensor<T>, int> make_training_example<T>(const ImageU8&, int,         \
                                                                  const TrainConfig&, Rng&);   \
  template TrainResult<T> train<T>(const std::vector<LabeledImage>&, const TrainConfig&,       \
                                   const ProgressFn&);                                         \
  template TrainResult<T> train<T>(const std::vector<ManifestRecord>&, const TrainConfig&,     \
                                   const ProgressFn&);
CAMID_INSTANTIATE(float)
CAMID_INSTANTIATE(double)
#undef CAMID_INSTANTIATE

}  // namespace camid
