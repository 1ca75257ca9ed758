#pragma once

#include <vector>

#include "camid/nn/tensor.hpp"

namespace camid::nn {

// ------------------------------------------------------------------ kernels
//
// The model runs its layers directly on channel ranges of preallocated
// concatenation buffers. Planes describes such a range: `base` points at
// channel 0 of the range in sample 0, and consecutive samples are
// `channel_stride * height * width` elements apart.

template <typename T>
struct Planes {
  T* base = nullptr;
  int batch = 0;
  int channels = 0;
  int channel_stride = 0;
  int height = 0;
  int width = 0;

  std::size_t plane() const { return static_cast<std::size_t>(height) * width; }
  T* sample(int n) const { return base + static_cast<std::size_t>(n) * channel_stride * plane(); }
};

template <typename T>
Planes<T> planes_of(Tensor<T>& t, int first_channel = 0, int channels = -1) {
  require_rank(t.shape(), 4, "planes_of");
  const int c = channels < 0 ? t.dim(1) - first_channel : channels;
  return {t.data() + static_cast<std::size_t>(first_channel) * t.dim(2) * t.dim(3), t.dim(0), c,
          t.dim(1), t.dim(2), t.dim(3)};
}

/// Reusable kernel buffers.
template <typename T>
struct Scratch {
  AlignedVector<T> col;
  AlignedVector<T> gemm;
  AlignedVector<T> packed;
  AlignedVector<T> dpacked;
  AlignedVector<T> dcol;
};

/// out = bias + W * im2col(in). Weights are (out_channels, in.channels, k, k).
template <typename T>
void conv_forward(const Planes<T>& in, const T* weight, const T* bias, int out_channels, int kernel,
                  int stride, int pad, const Planes<T>& out, Scratch<T>& scratch);

/// Accumulates weight/bias gradients and, when din.base is non-null, the input
/// gradient (din += ...).
template <typename T>
void conv_backward(const Planes<T>& in, const T* weight, int out_channels, int kernel, int stride,
                   int pad, const Planes<T>& dout, T* dweight, T* dbias, const Planes<T>& din,
                   Scratch<T>& scratch);

int conv_output_size(int in, int kernel, int stride, int pad);

// ------------------------------------------------------ tensor-level ops

template <typename T>
struct Conv2dGrads {
  Tensor<T> input;
  Tensor<T> weight;
  Tensor<T> bias;
};

/// Zero-padded cross-correlation. input (N, C, H, W), weight (O, C, K, K),
/// bias (O). Throws ShapeMismatch.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& bias, int stride,
                 int pad);
template <typename T>
Conv2dGrads<T> conv2d_backward(const Tensor<T>& input, const Tensor<T>& weight,
                               const Tensor<T>& dout, int stride, int pad);

template <typename T>
Tensor<T> relu(const Tensor<T>& x);
template <typename T>
Tensor<T> relu_backward(const Tensor<T>& x, const Tensor<T>& dout);

/// 2x2 average pooling with stride 2; odd trailing rows/cols are dropped.
template <typename T>
Tensor<T> avg_pool2(const Tensor<T>& x);
template <typename T>
Tensor<T> avg_pool2_backward(const Shape& input_shape, const Tensor<T>& dout);

/// (N, C, H, W) -> (N, C) spatial mean.
template <typename T>
Tensor<T> global_avg_pool(const Tensor<T>& x);
template <typename T>
Tensor<T> global_avg_pool_backward(const Shape& input_shape, const Tensor<T>& dout);

/// x (N, F), weight (C, F), bias (C) -> (N, C).
template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias);
template <typename T>
struct LinearGrads {
  Tensor<T> input;
  Tensor<T> weight;
  Tensor<T> bias;
};
template <typename T>
LinearGrads<T> linear_backward(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& dout);

/// Row-wise softmax with max subtraction.
template <typename T>
Tensor<T> softmax(const Tensor<T>& logits);

enum class LossKind {
  /// Sum over classes of binary cross-entropy terms, mean over the batch.
  PerClassBinary,
  /// -sum y log p, mean over the batch.
  Categorical,
};

inline constexpr double kProbabilityClamp = 1e-7;

/// Probabilities are clamped to [1e-7, 1 - 1e-7] before taking logs.
template <typename T>
double cross_entropy(const Tensor<T>& probs, const Tensor<T>& onehot,
                     LossKind kind = LossKind::PerClassBinary);

/// Gradient of cross_entropy(softmax(logits), onehot) with respect to the
/// logits, given probs = softmax(logits).
template <typename T>
Tensor<T> cross_entropy_logit_grad(const Tensor<T>& probs, const Tensor<T>& onehot,
                                   LossKind kind = LossKind::PerClassBinary);

// ------------------------------------------------------------ dense block

struct DenseBlockConfig {
  int num_layers = 4;
  int growth_rate = 12;

  friend bool operator==(const DenseBlockConfig&, const DenseBlockConfig&) = default;
};

/// Per-layer (weight, bias); layer i has weight (k, C0 + i*k, 3, 3).
template <typename T>
struct DenseBlockParams {
  std::vector<Tensor<T>> weights;
  std::vector<Tensor<T>> biases;
};

/// Each layer is ReLU then a 3x3 convolution producing growth_rate channels
/// from the concatenation of the block input and every earlier layer output.
/// Returns the full concatenation, C0 + L*k channels.
template <typename T>
Tensor<T> dense_block_forward(const Tensor<T>& input, const DenseBlockConfig& cfg,
                              const DenseBlockParams<T>& params);

template <typename T>
struct DenseBlockGrads {
  Tensor<T> input;
  DenseBlockParams<T> params;
};
template <typename T>
DenseBlockGrads<T> dense_block_backward(const Tensor<T>& input, const DenseBlockConfig& cfg,
                                        const DenseBlockParams<T>& params, const Tensor<T>& dout);

namespace detail {

/// Runs the block in place on `pre`, whose first c0 channels hold the block
/// input. `post` receives relu(pre) for every channel.
template <typename T>
void dense_block_run(Tensor<T>& pre, Tensor<T>& post, int c0, const DenseBlockConfig& cfg,
                     const std::vector<const T*>& weights, const std::vector<const T*>& biases,
                     Scratch<T>& scratch);

/// Given dpre holding dL/d(pre) from downstream, back-propagates through the
/// block layers in reverse. On return dpre's first c0 channels hold the
/// gradient with respect to the block input.
template <typename T>
void dense_block_unwind(const Tensor<T>& pre, const Tensor<T>& post, Tensor<T>& dpre, int c0,
                        const DenseBlockConfig& cfg, const std::vector<const T*>& weights,
                        const std::vector<T*>& dweights, const std::vector<T*>& dbiases,
                        Scratch<T>& scratch);

}  // namespace detail

}  // namespace camid::nn
