#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "camid/augment.hpp"
#include "camid/dataset.hpp"
#include "camid/nn/adam.hpp"
#include "camid/nn/model.hpp"

namespace camid {

struct TrainConfig {
  int pre_crop = 960;
  int train_crop = 480;
  int batch_size = 8;
  int iterations = 2000;
  double learning_rate = 1e-3;
  /// Multiply the learning rate by lr_decay_factor every lr_decay_every
  /// iterations; 0 keeps it constant.
  int lr_decay_every = 0;
  double lr_decay_factor = 0.1;
  std::uint64_t seed = 0;
  /// When false no op is applied, not even the dihedral one.
  bool augment = true;
  AugmentPolicy policy;
  nn::LossKind loss = nn::LossKind::PerClassBinary;
  nn::ModelConfig model;
  int log_every = 10;
  /// Write `checkpoint_path` every this many iterations (0: never).
  int checkpoint_every = 0;
  std::filesystem::path checkpoint_path;
  int workers = 1;

  /// Throws InvalidParam.
  void validate() const;
};

/// One 8-bit training patch, before normalization: random pre_crop window,
/// sampled augmentations, random train_crop window. A Scale op that would
/// leave the intermediate smaller than train_crop has its factor redrawn from
/// [max(train_crop / pre_crop, lo), hi]. Throws TooSmall for images smaller
/// than pre_crop.
ImageU8 make_training_patch(const ImageU8& img, const TrainConfig& cfg, Rng& rng);

/// The op list make_training_patch applies, after the scale adjustment.
std::vector<AugmentOp> sample_patch_ops(const TrainConfig& cfg, Rng& rng);

/// Images of identical size to an (N, 3, H, W) tensor scaled to [0, 1].
template <typename T>
nn::Tensor<T> to_tensor(const std::vector<ImageU8>& images);

/// (3, crop, crop) tensor in [0, 1] and its label.
template <typename T>
std::pair<nn::Tensor<T>, int> make_training_example(const ImageU8& img, int class_id,
                                                    const TrainConfig& cfg, Rng& rng);

struct LossCurve {
  /// (iteration, mean loss over the preceding logging window)
  std::vector<std::pair<int, double>> points;

  /// "iteration,loss" header plus one row per point.
  std::string csv() const;
};

struct LabeledImage {
  ImageU8 image;
  int label = 0;
};

struct LoadResult {
  std::vector<LabeledImage> images;
  std::vector<ManifestRecord> records;  // parallel to images
  /// (path, reason)
  std::vector<std::pair<std::string, std::string>> skipped;
};

/// Reads every record's image. Unreadable images and, when min_side > 0,
/// images smaller than min_side x min_side are skipped and reported.
LoadResult load_images(const std::vector<ManifestRecord>& records, int min_side = 0,
                       int workers = 1);

template <typename T>
struct TrainResult {
  nn::Model<T> model;
  LossCurve curve;
  std::size_t skipped_images = 0;
};

using ProgressFn = std::function<void(int iteration, double window_loss)>;

/// Trains cfg.model on the given examples. The batch for iteration i holds
/// the next batch_size entries of a per-epoch seeded permutation, and example
/// j of the run uses the stream (seed, j), so results do not depend on the
/// worker count. Throws InsufficientData when a class has no examples,
/// NonFiniteGradient naming the iteration.
template <typename T>
TrainResult<T> train(const std::vector<LabeledImage>& examples, const TrainConfig& cfg,
                     const ProgressFn& progress = {});

/// Loads the Train split of `records`, drops images smaller than pre_crop,
/// and trains. skipped_images counts the dropped records.
template <typename T>
TrainResult<T> train(const std::vector<ManifestRecord>& records, const TrainConfig& cfg,
                     const ProgressFn& progress = {});

}  // namespace camid
