#include "camid/nn/adam.hpp"

#include <cmath>

namespace camid::nn {

template <typename T>
AdamState<T> AdamState<T>::zeros_like(const std::vector<Tensor<T>>& params) {
  AdamState s;
  for (const auto& p : params) {
    s.m.emplace_back(p.shape());
    s.v.emplace_back(p.shape());
  }
  return s;
}

template <typename T>
void adam_step(std::vector<Tensor<T>>& params, const std::vector<Tensor<T>>& grads,
               AdamState<T>& state, const AdamConfig& config) {
  if (grads.size() != params.size() || state.m.size() != params.size() ||
      state.v.size() != params.size()) {
    throw Error(Errc::ShapeMismatch, "adam: " + std::to_string(params.size()) + " parameters, " +
                                         std::to_string(grads.size()) + " gradients, " +
                                         std::to_string(state.m.size()) + " moments");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& shape = params[i].shape();
    if (grads[i].shape() != shape || state.m[i].shape() != shape || state.v[i].shape() != shape) {
      throw Error(Errc::ShapeMismatch, "adam: shape mismatch at parameter " + std::to_string(i) +
                                           " " + shape_string(shape));
    }
    if (!grads[i].all_finite()) {
      throw Error(Errc::NonFiniteGradient,
                  "non-finite gradient at parameter " + std::to_string(i) + ", step " +
                      std::to_string(state.step + 1));
    }
  }

  state.step += 1;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(config.beta1, t);
  const double c2 = 1.0 - std::pow(config.beta2, t);
  const T b1 = static_cast<T>(config.beta1);
  const T b2 = static_cast<T>(config.beta2);
  for (std::size_t i = 0; i < params.size(); ++i) {
    T* p = params[i].data();
    const T* g = grads[i].data();
    T* m = state.m[i].data();
    T* v = state.v[i].data();
    for (std::size_t j = 0; j < params[i].numel(); ++j) {
      m[j] = b1 * m[j] + (T{1} - b1) * g[j];
      v[j] = b2 * v[j] + (T{1} - b2) * g[j] * g[j];
      const double mhat = m[j] / c1;
      const double vhat = v[j] / c2;
      p[j] = static_cast<T>(p[j] - config.learning_rate * mhat / (std::sqrt(vhat) + config.epsilon));
    }
  }
}

template struct AdamState<float>;
template struct AdamState<double>;
template void adam_step<float>(std::vector<Tensor<float>>&, const std::vector<Tensor<float>>&,
                               AdamState<float>&, const AdamConfig&);
template void adam_step<double>(std::vector<Tensor<double>>&, const std::vector<Tensor<double>>&,
                                AdamState<double>&, const AdamConfig&);

}  // namespace camid::nn
