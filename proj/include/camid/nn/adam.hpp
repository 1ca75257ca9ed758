#pragma once

#include <cstdint>
#include <vector>

#include "camid/nn/tensor.hpp"

namespace camid::nn {

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

template <typename T>
struct AdamState {
  std::vector<Tensor<T>> m;
  std::vector<Tensor<T>> v;
  std::int64_t step = 0;

  /// Zero moments shaped like `params`.
  static AdamState zeros_like(const std::vector<Tensor<T>>& params);
};

/// One bias-corrected Adam update. Throws ShapeMismatch when the parameter,
/// gradient and moment lists disagree, and NonFiniteGradient (leaving params
/// and state untouched) if any gradient element is NaN or infinite.
template <typename T>
void adam_step(std::vector<Tensor<T>>& params, const std::vector<Tensor<T>>& grads,
               AdamState<T>& state, const AdamConfig& config = {});

}  // namespace camid::nn
