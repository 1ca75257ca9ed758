#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "camid/nn/layers.hpp"

namespace camid::nn {

/// Stem 3x3 conv, dense blocks separated by transitions (1x1 conv halving the
/// channel count, then 2x2 average pooling), ReLU, global average pooling and
/// a linear head.
struct ModelConfig {
  int in_channels = 3;
  int stem_channels = 16;
  std::vector<DenseBlockConfig> blocks{{4, 12}, {4, 12}, {4, 12}};
  int num_classes = 10;

  /// Throws InvalidParam.
  void validate() const;
  /// Smallest square input side the pooling stack accepts.
  int min_input_size() const;
  /// Channel count entering block b.
  int block_input_channels(std::size_t b) const;
  int feature_channels() const;

  /// Parameter names and shapes in storage order.
  std::vector<std::pair<std::string, Shape>> parameter_shapes() const;
  std::size_t parameter_count() const;

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

template <typename T>
struct LossAndGrads {
  double loss = 0.0;
  Tensor<T> probs;
  /// Same order as Model::parameters().
  std::vector<Tensor<T>> grads;
};

template <typename T>
class Model {
 public:
  /// All parameters zero; call initialize() for a trainable start.
  explicit Model(ModelConfig config);

  /// Glorot-uniform weights, zero biases, drawn from a stream seeded by `seed`.
  void initialize(std::uint64_t seed);

  const ModelConfig& config() const noexcept { return config_; }
  const std::vector<std::string>& names() const noexcept { return names_; }
  std::vector<Tensor<T>>& parameters() noexcept { return params_; }
  const std::vector<Tensor<T>>& parameters() const noexcept { return params_; }
  /// Throws InvalidParam for unknown names.
  Tensor<T>& parameter(const std::string& name);

  /// batch is (N, in_channels, H, W). Thread-safe for concurrent calls.
  Tensor<T> logits(const Tensor<T>& batch) const;
  /// softmax(logits(batch)).
  Tensor<T> forward(const Tensor<T>& batch) const;

  LossAndGrads<T> loss_and_gradients(const Tensor<T>& batch, const Tensor<T>& onehot,
                                     LossKind kind = LossKind::PerClassBinary) const;

  template <typename U>
  Model<U> cast() const {
    Model<U> out(config_);
    for (std::size_t i = 0; i < params_.size(); ++i) out.parameters()[i] = params_[i].template cast<U>();
    return out;
  }

 private:
  struct Activations;
  void run(const Tensor<T>& batch, Activations& act) const;
  void check_input(const Tensor<T>& batch) const;

  ModelConfig config_;
  std::vector<std::string> names_;
  std::vector<Tensor<T>> params_;
};

/// One-hot matrix (N, classes). Throws InvalidParam for out-of-range labels.
template <typename T>
Tensor<T> one_hot(const std::vector<int>& labels, int classes);

}  // namespace camid::nn
