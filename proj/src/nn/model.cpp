#include "camid/nn/model.hpp"

#include <cmath>

#include "camid/rng.hpp"

namespace camid::nn {

void ModelConfig::validate() const {
  auto fail = [](const std::string& what) { throw Error(Errc::InvalidParam, "model config: " + what); };
  if (in_channels < 1) fail("in_channels must be >= 1");
  if (stem_channels < 1) fail("stem_channels must be >= 1");
  if (num_classes < 2) fail("num_classes must be >= 2");
  if (blocks.empty()) fail("at least one dense block is required");
  if (blocks.size() > 8) fail("at most 8 dense blocks are supported");
  for (const auto& b : blocks) {
    if (b.num_layers < 0) fail("num_layers must be >= 0");
    if (b.growth_rate < 1) fail("growth_rate must be >= 1");
  }
  for (std::size_t b = 0; b + 1 < blocks.size(); ++b) {
    if (block_input_channels(b + 1) < 1) fail("a transition would produce zero channels");
  }
}

int ModelConfig::min_input_size() const { return 1 << (blocks.size() - 1); }

int ModelConfig::block_input_channels(std::size_t b) const {
  int c = stem_channels;
  for (std::size_t i = 0; i < b; ++i) c = (c + blocks[i].num_layers * blocks[i].growth_rate) / 2;
  return c;
}

int ModelConfig::feature_channels() const {
  const auto& last = blocks.back();
  return block_input_channels(blocks.size() - 1) + last.num_layers * last.growth_rate;
}

std::vector<std::pair<std::string, Shape>> ModelConfig::parameter_shapes() const {
  std::vector<std::pair<std::string, Shape>> out;
  auto add = [&](const std::string& name, Shape w) {
    const int o = w[0];
    out.emplace_back(name + ".weight", std::move(w));
    out.emplace_back(name + ".bias", Shape{o});
  };
  add("stem", {stem_channels, in_channels, 3, 3});
  for (std::size_t b = 0; b < blocks.size(); ++b) {
    const int c0 = block_input_channels(b);
    const auto& blk = blocks[b];
    for (int i = 0; i < blk.num_layers; ++i) {
      add("block" + std::to_string(b) + ".layer" + std::to_string(i),
          {blk.growth_rate, c0 + i * blk.growth_rate, 3, 3});
    }
    if (b + 1 < blocks.size()) {
      add("trans" + std::to_string(b),
          {block_input_channels(b + 1), c0 + blk.num_layers * blk.growth_rate, 1, 1});
    }
  }
  add("head", {num_classes, feature_channels()});
  return out;
}

std::size_t ModelConfig::parameter_count() const {
  std::size_t n = 0;
  for (const auto& [name, shape] : parameter_shapes()) n += shape_numel(shape);
  return n;
}

// ------------------------------------------------------------------ model

namespace {

template <typename T>
void pool2_forward(const Planes<T>& in, const Planes<T>& out) {
  for (int n = 0; n < in.batch; ++n) {
    for (int c = 0; c < in.channels; ++c) {
      const T* src = in.sample(n) + c * in.plane();
      T* dst = out.sample(n) + c * out.plane();
      for (int y = 0; y < out.height; ++y) {
        const T* r0 = src + static_cast<std::size_t>(2 * y) * in.width;
        const T* r1 = r0 + in.width;
        for (int x = 0; x < out.width; ++x) {
          dst[y * out.width + x] = T(0.25) * (r0[2 * x] + r0[2 * x + 1] + r1[2 * x] + r1[2 * x + 1]);
        }
      }
    }
  }
}

template <typename T>
void pool2_backward(const Planes<T>& dout, const Planes<T>& din) {
  for (int n = 0; n < dout.batch; ++n) {
    for (int c = 0; c < dout.channels; ++c) {
      const T* src = dout.sample(n) + c * dout.plane();
      T* dst = din.sample(n) + c * din.plane();
      for (int y = 0; y < dout.height; ++y) {
        T* r0 = dst + static_cast<std::size_t>(2 * y) * din.width;
        T* r1 = r0 + din.width;
        for (int x = 0; x < dout.width; ++x) {
          const T g = T(0.25) * src[y * dout.width + x];
          r0[2 * x] = g;
          r0[2 * x + 1] = g;
          r1[2 * x] = g;
          r1[2 * x + 1] = g;
        }
      }
    }
  }
}

template <typename T>
void mask_into(const Tensor<T>& pre, const Tensor<T>& dpost, Tensor<T>& dpre) {
  for (std::size_t i = 0; i < pre.numel(); ++i) dpre[i] = pre[i] > T{0} ? dpost[i] : T{0};
}

}  // namespace

template <typename T>
struct Model<T>::Activations {
  std::vector<Tensor<T>> pre;
  std::vector<Tensor<T>> post;
  std::vector<Tensor<T>> trans;  // transition conv outputs, before pooling
  Tensor<T> pooled;
  Tensor<T> logits;
  Scratch<T> scratch;
};

template <typename T>
Model<T>::Model(ModelConfig config) : config_(std::move(config)) {
  config_.validate();
  for (auto& [name, shape] : config_.parameter_shapes()) {
    names_.push_back(name);
    params_.emplace_back(shape);
  }
}

template <typename T>
void Model<T>::initialize(std::uint64_t seed) {
  Rng rng(seed);
  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto& p = params_[i];
    if (p.rank() == 1) {
      p.fill(T{0});
      continue;
    }
    std::size_t receptive = 1;
    for (int d = 2; d < p.rank(); ++d) receptive *= static_cast<std::size_t>(p.dim(d));
    const double fan_out = static_cast<double>(p.dim(0)) * receptive;
    const double fan_in = static_cast<double>(p.dim(1)) * receptive;
    const double limit = std::sqrt(6.0 / (fan_in + fan_out));
    for (auto& v : p.values()) v = static_cast<T>(rng.uniform(-limit, limit));
  }
}

template <typename T>
Tensor<T>& Model<T>::parameter(const std::string& name) {
  for (std::size_t i = 0; i < names_.size(); ++i) {
    if (names_[i] == name) return params_[i];
  }
  throw Error(Errc::InvalidParam, "no parameter named '" + name + "'");
}

template <typename T>
void Model<T>::check_input(const Tensor<T>& batch) const {
  require_rank(batch.shape(), 4, "model input");
  if (batch.dim(1) != config_.in_channels) {
    throw Error(Errc::ShapeMismatch, "model expects " + std::to_string(config_.in_channels) +
                                         " input channels, got " + shape_string(batch.shape()));
  }
  const int min = config_.min_input_size();
  if (batch.dim(2) < min || batch.dim(3) < min || batch.dim(0) < 1) {
    throw Error(Errc::ShapeMismatch, "model input " + shape_string(batch.shape()) +
                                         " is smaller than the minimum side " + std::to_string(min));
  }
}

template <typename T>
void Model<T>::run(const Tensor<T>& batch, Activations& act) const {
  check_input(batch);
  const auto& blocks = config_.blocks;
  const int n = batch.dim(0);
  int h = batch.dim(2);
  int w = batch.dim(3);
  std::size_t k = 0;  // parameter cursor

  act.pre.clear();
  act.post.clear();
  act.trans.clear();
  for (std::size_t b = 0; b < blocks.size(); ++b) {
    const int c0 = config_.block_input_channels(b);
    const int ctot = c0 + blocks[b].num_layers * blocks[b].growth_rate;
    act.pre.emplace_back(Shape{n, ctot, h, w});
    act.post.emplace_back(Shape{n, ctot, h, w});
    if (b == 0) {
      auto in = planes_of(const_cast<Tensor<T>&>(batch));
      conv_forward(in, params_[0].data(), params_[1].data(), c0, 3, 1, 1,
                   planes_of(act.pre[0], 0, c0), act.scratch);
      k = 2;
    } else {
      // Transition from the previous block.
      const int ct = c0;
      auto& prev = act.post[b - 1];
      act.trans.emplace_back(Shape{n, ct, prev.dim(2), prev.dim(3)});
      conv_forward(planes_of(prev), params_[k].data(), params_[k + 1].data(), ct, 1, 1, 0,
                   planes_of(act.trans.back()), act.scratch);
      k += 2;
      pool2_forward(planes_of(act.trans.back()), planes_of(act.pre[b], 0, ct));
    }
    std::vector<const T*> weights;
    std::vector<const T*> biases;
    for (int i = 0; i < blocks[b].num_layers; ++i) {
      weights.push_back(params_[k].data());
      biases.push_back(params_[k + 1].data());
      k += 2;
    }
    detail::dense_block_run(act.pre[b], act.post[b], c0, blocks[b], weights, biases, act.scratch);
    h /= 2;
    w /= 2;
  }
  act.pooled = global_avg_pool(act.post.back());
  act.logits = linear(act.pooled, params_[k], params_[k + 1]);
}

template <typename T>
Tensor<T> Model<T>::logits(const Tensor<T>& batch) const {
  Activations act;
  run(batch, act);
  return std::move(act.logits);
}

template <typename T>
Tensor<T> Model<T>::forward(const Tensor<T>& batch) const {
  return softmax(logits(batch));
}

template <typename T>
LossAndGrads<T> Model<T>::loss_and_gradients(const Tensor<T>& batch, const Tensor<T>& onehot,
                                             LossKind kind) const {
  Activations act;
  run(batch, act);
  LossAndGrads<T> out;
  out.probs = softmax(act.logits);
  if (onehot.shape() != out.probs.shape()) {
    throw Error(Errc::ShapeMismatch, "labels " + shape_string(onehot.shape()) + " for logits " +
                                         shape_string(out.probs.shape()));
  }
  out.loss = cross_entropy(out.probs, onehot, kind);
  for (const auto& p : params_) out.grads.emplace_back(p.shape());

  const auto& blocks = config_.blocks;
  const std::size_t head = params_.size() - 2;
  const Tensor<T> dlogits = cross_entropy_logit_grad(out.probs, onehot, kind);
  auto lin = linear_backward(act.pooled, params_[head], dlogits);
  out.grads[head] = std::move(lin.weight);
  out.grads[head + 1] = std::move(lin.bias);

  Tensor<T> dpre(act.pre.back().shape());
  mask_into(act.pre.back(), global_avg_pool_backward(act.post.back().shape(), lin.input), dpre);

  std::size_t k = head;  // one past the current block's last parameter
  for (std::size_t b = blocks.size(); b-- > 0;) {
    const int c0 = config_.block_input_channels(b);
    const auto layers = static_cast<std::size_t>(blocks[b].num_layers);
    const std::size_t first = k - 2 * layers;
    std::vector<const T*> weights;
    std::vector<T*> dweights;
    std::vector<T*> dbiases;
    for (std::size_t i = 0; i < layers; ++i) {
      weights.push_back(params_[first + 2 * i].data());
      dweights.push_back(out.grads[first + 2 * i].data());
      dbiases.push_back(out.grads[first + 2 * i + 1].data());
    }
    detail::dense_block_unwind(act.pre[b], act.post[b], dpre, c0, blocks[b], weights, dweights,
                               dbiases, act.scratch);
    k = first;
    if (b == 0) {
      Planes<T> none;
      conv_backward(planes_of(const_cast<Tensor<T>&>(batch)), params_[0].data(), c0, 3, 1, 1,
                    planes_of(dpre, 0, c0), out.grads[0].data(), out.grads[1].data(), none,
                    act.scratch);
      break;
    }
    // Transition b-1: pool, then 1x1 conv on post[b-1].
    auto& trans = act.trans[b - 1];
    Tensor<T> dtrans(trans.shape());
    pool2_backward(planes_of(dpre, 0, c0), planes_of(dtrans));
    Tensor<T> dpost(act.post[b - 1].shape());
    conv_backward(planes_of(act.post[b - 1]), params_[k - 2].data(), c0, 1, 1, 0, planes_of(dtrans),
                  out.grads[k - 2].data(), out.grads[k - 1].data(), planes_of(dpost), act.scratch);
    k -= 2;
    dpre = Tensor<T>(act.pre[b - 1].shape());
    mask_into(act.pre[b - 1], dpost, dpre);
  }
  return out;
}

template <typename T>
Tensor<T> one_hot(const std::vector<int>& labels, int classes) {
  Tensor<T> out({static_cast<int>(labels.size()), classes});
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || labels[i] >= classes) {
      throw Error(Errc::InvalidParam, "label " + std::to_string(labels[i]) + " outside [0, " +
                                          std::to_string(classes) + ")");
    }
    out.at(static_cast<int>(i), labels[i]) = T{1};
  }
  return out;
}

template class Model<float>;
template class Model<double>;
template Tensor<float> one_hot<float>(const std::vector<int>&, int);
template Tensor<double> one_hot<double>(const std::vector<int>&, int);

}  // namespace camid::nn
