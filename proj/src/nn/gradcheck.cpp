#include "camid/nn/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "camid/error.hpp"
#include "camid/nn/model.hpp"
#include "camid/rng.hpp"

namespace camid::nn {

double relative_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) /
         std::max({std::abs(analytic), std::abs(numeric), 1e-8});
}

double grad_check(const std::function<double()>& f, std::span<double> x,
                  std::span<const double> analytic, double h, std::size_t max_coords,
                  std::uint64_t seed) {
  if (x.size() != analytic.size()) {
    throw Error(Errc::LengthMismatch, "grad_check: " + std::to_string(x.size()) + " inputs vs " +
                                          std::to_string(analytic.size()) + " gradient entries");
  }
  std::vector<std::size_t> coords(x.size());
  std::iota(coords.begin(), coords.end(), std::size_t{0});
  if (max_coords != 0 && max_coords < coords.size()) {
    Rng rng(seed);
    rng.shuffle(std::span<std::size_t>(coords));
    coords.resize(max_coords);
  }
  double worst = 0.0;
  for (std::size_t i : coords) {
    const double saved = x[i];
    x[i] = saved + h;
    const double up = f();
    x[i] = saved - h;
    const double down = f();
    x[i] = saved;
    worst = std::max(worst, relative_error(analytic[i], (up - down) / (2.0 * h)));
  }
  return worst;
}

namespace {

using Td = Tensor<double>;

constexpr double kOpTolerance = 1e-4;
constexpr double kModelTolerance = 1e-3;

Td random_tensor(const Shape& shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Td t(shape);
  for (auto& v : t.values()) v = rng.uniform(lo, hi);
  return t;
}

int pick(Rng& rng, int lo, int hi) { return static_cast<int>(rng.uniform_int(lo, hi)); }

double dot(const Td& a, const Td& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) s += a[i] * b[i];
  return s;
}

double check(const std::function<double()>& f, Td& x, const Td& grad, double h, Rng& rng,
             std::size_t max_coords = 0) {
  return grad_check(f, x.values(), grad.values(), h, max_coords, rng.next_u64());
}

// ReLU networks are only piecewise smooth. A coordinate whose central
// differences at h and h/10 disagree straddles a kink and is skipped; the rest
// must match the analytic gradient at either step (the smaller one absorbs
// kinks close to x, the larger one roundoff on tiny gradients).
double check_piecewise(const std::function<double()>& f, Td& x, const Td& grad, double h, Rng& rng,
                       std::size_t max_coords, std::size_t& probed, std::size_t& skipped) {
  std::vector<std::size_t> coords(x.numel());
  std::iota(coords.begin(), coords.end(), std::size_t{0});
  if (max_coords < coords.size()) {
    rng.shuffle(std::span<std::size_t>(coords));
    coords.resize(max_coords);
  }
  auto central = [&](std::size_t i, double step) {
    const double saved = x[i];
    x[i] = saved + step;
    const double up = f();
    x[i] = saved - step;
    const double down = f();
    x[i] = saved;
    return (up - down) / (2.0 * step);
  };
  double worst = 0.0;
  for (std::size_t i : coords) {
    ++probed;
    const double coarse = central(i, h), fine = central(i, h / 10.0);
    if (relative_error(coarse, fine) > kModelTolerance) {
      ++skipped;
      continue;
    }
    worst = std::max(worst, std::min(relative_error(grad[i], coarse), relative_error(grad[i], fine)));
  }
  return worst;
}

}  // namespace

std::vector<GradCheckEntry> gradient_suite(std::uint64_t seed, double h) {
  Rng rng(seed);
  std::vector<GradCheckEntry> out;
  auto record = [&](std::string name, double err, double tol = kOpTolerance) {
    out.push_back({std::move(name), err, tol});
  };

  {
    const int n = pick(rng, 1, 2);
    const int c = pick(rng, 1, 3);
    const int o = pick(rng, 1, 3);
    const int k = rng.bernoulli(0.5) ? 3 : 1;
    const int stride = pick(rng, 1, 2);
    const int pad = k == 3 ? pick(rng, 0, 1) : 0;
    Td x = random_tensor({n, c, pick(rng, 4, 7), pick(rng, 4, 7)}, rng);
    Td w = random_tensor({o, c, k, k}, rng);
    Td b = random_tensor({o}, rng);
    const Td r = random_tensor(conv2d(x, w, b, stride, pad).shape(), rng);
    const auto g = conv2d_backward(x, w, r, stride, pad);
    auto f = [&] { return dot(r, conv2d(x, w, b, stride, pad)); };
    record("conv2d.input", check(f, x, g.input, h, rng));
    record("conv2d.weight", check(f, w, g.weight, h, rng));
    record("conv2d.bias", check(f, b, g.bias, h, rng));
  }
  {
    Td x = random_tensor({pick(rng, 1, 2), pick(rng, 1, 3), pick(rng, 2, 5), pick(rng, 2, 5)}, rng,
                         0.1, 1.0);
    // Keep every probe away from the kink at zero.
    for (auto& v : x.values()) v = rng.bernoulli(0.5) ? v : -v;
    const Td r = random_tensor(x.shape(), rng);
    const Td g = relu_backward(x, r);
    auto f = [&] { return dot(r, relu(x)); };
    record("relu", check(f, x, g, h, rng));
  }
  {
    Td x = random_tensor({pick(rng, 1, 2), pick(rng, 1, 3), pick(rng, 2, 7), pick(rng, 2, 7)}, rng);
    const Td r = random_tensor(avg_pool2(x).shape(), rng);
    const Td g = avg_pool2_backward(x.shape(), r);
    auto f = [&] { return dot(r, avg_pool2(x)); };
    record("avg_pool2", check(f, x, g, h, rng));
  }
  {
    Td x = random_tensor({pick(rng, 1, 2), pick(rng, 1, 4), pick(rng, 1, 5), pick(rng, 1, 5)}, rng);
    const Td r = random_tensor({x.dim(0), x.dim(1)}, rng);
    const Td g = global_avg_pool_backward(x.shape(), r);
    auto f = [&] { return dot(r, global_avg_pool(x)); };
    record("global_avg_pool", check(f, x, g, h, rng));
  }
  {
    const int n = pick(rng, 1, 3);
    const int feat = pick(rng, 1, 6);
    const int classes = pick(rng, 2, 5);
    Td x = random_tensor({n, feat}, rng);
    Td w = random_tensor({classes, feat}, rng);
    Td b = random_tensor({classes}, rng);
    const Td r = random_tensor({n, classes}, rng);
    const auto g = linear_backward(x, w, r);
    auto f = [&] { return dot(r, linear(x, w, b)); };
    record("linear.input", check(f, x, g.input, h, rng));
    record("linear.weight", check(f, w, g.weight, h, rng));
    record("linear.bias", check(f, b, g.bias, h, rng));
  }
  for (const auto kind : {LossKind::PerClassBinary, LossKind::Categorical}) {
    const int n = pick(rng, 1, 3);
    const int classes = pick(rng, 2, 6);
    Td logits = random_tensor({n, classes}, rng, -2.0, 2.0);
    std::vector<int> labels;
    for (int i = 0; i < n; ++i) labels.push_back(pick(rng, 0, classes - 1));
    const Td y = one_hot<double>(labels, classes);
    const Td g = cross_entropy_logit_grad(softmax(logits), y, kind);
    auto f = [&] { return cross_entropy(softmax(logits), y, kind); };
    record(kind == LossKind::PerClassBinary ? "softmax_cross_entropy.binary"
                                            : "softmax_cross_entropy.categorical",
           check(f, logits, g, h, rng));
  }
  {
    const DenseBlockConfig cfg{pick(rng, 1, 3), pick(rng, 1, 3)};
    const int c0 = pick(rng, 1, 3);
    Td x = random_tensor({pick(rng, 1, 2), c0, pick(rng, 3, 5), pick(rng, 3, 5)}, rng);
    DenseBlockParams<double> params;
    for (int i = 0; i < cfg.num_layers; ++i) {
      params.weights.push_back(
          random_tensor({cfg.growth_rate, c0 + i * cfg.growth_rate, 3, 3}, rng, -0.5, 0.5));
      params.biases.push_back(random_tensor({cfg.growth_rate}, rng, -0.1, 0.1));
    }
    const Td r = random_tensor(dense_block_forward(x, cfg, params).shape(), rng);
    const auto g = dense_block_backward(x, cfg, params, r);
    auto f = [&] { return dot(r, dense_block_forward(x, cfg, params)); };
    record("dense_block.input", check(f, x, g.input, h, rng));
    for (int i = 0; i < cfg.num_layers; ++i) {
      const auto li = static_cast<std::size_t>(i);
      record("dense_block.layer" + std::to_string(i) + ".weight",
             check(f, params.weights[li], g.params.weights[li], h, rng));
      record("dense_block.layer" + std::to_string(i) + ".bias",
             check(f, params.biases[li], g.params.biases[li], h, rng));
    }
  }
  {
    ModelConfig cfg;
    cfg.stem_channels = 4;
    cfg.blocks = {{2, 3}, {2, 3}};
    cfg.num_classes = 3;
    Model<double> model(cfg);
    model.initialize(rng.next_u64());
    // Non-zero biases so every bias path is exercised.
    for (std::size_t i = 0; i < model.parameters().size(); ++i) {
      if (model.parameters()[i].rank() == 1) {
        for (auto& v : model.parameters()[i].values()) v = rng.uniform(-0.1, 0.1);
      }
    }
    const Td batch = random_tensor({2, 3, 16, 16}, rng, 0.0, 1.0);
    const Td y = one_hot<double>({pick(rng, 0, 2), pick(rng, 0, 2)}, 3);
    const auto lg = model.loss_and_gradients(batch, y);
    auto f = [&] { return cross_entropy(model.forward(batch), y); };
    double worst = 0.0;
    std::size_t probed = 0, skipped = 0;
    for (std::size_t i = 0; i < model.parameters().size(); ++i) {
      worst = std::max(worst, check_piecewise(f, model.parameters()[i], lg.grads[i], h, rng, 24,
                                              probed, skipped));
    }
    // Mostly kinks means the check proved nothing.
    if (2 * skipped > probed) worst = INFINITY;
    record("model", worst, kModelTolerance);
  }
  return out;
}

}  // namespace camid::nn
