#include <gtest/gtest.h>

#include <cmath>
#include <fstream>

#include "camid/error.hpp"
#include "camid/io.hpp"
#include "camid/nn/adam.hpp"
#include "camid/nn/checkpoint.hpp"
#include "camid/nn/gradcheck.hpp"
#include "camid/nn/model.hpp"
#include "test_support.hpp"

using namespace camid;
using namespace camid::nn;
using camid::testing::TempDir;

namespace {

Tensor<double> random_tensor(Shape shape, Rng& rng, double lo = -1, double hi = 1) {
  Tensor<double> t(std::move(shape));
  for (auto& v : t.values()) v = rng.uniform(lo, hi);
  return t;
}

// Direct six-loop convolution.
Tensor<double> conv_oracle(const Tensor<double>& in, const Tensor<double>& w,
                           const Tensor<double>& b, int stride, int pad) {
  const int N = in.dim(0), C = in.dim(1), H = in.dim(2), W = in.dim(3);
  const int O = w.dim(0), K = w.dim(2);
  const int Ho = (H + 2 * pad - K) / stride + 1, Wo = (W + 2 * pad - K) / stride + 1;
  Tensor<double> out({N, O, Ho, Wo});
  for (int n = 0; n < N; ++n)
    for (int o = 0; o < O; ++o)
      for (int y = 0; y < Ho; ++y)
        for (int x = 0; x < Wo; ++x) {
          double s = b[static_cast<std::size_t>(o)];
          for (int c = 0; c < C; ++c)
            for (int ky = 0; ky < K; ++ky)
              for (int kx = 0; kx < K; ++kx) {
                const int iy = y * stride + ky - pad, ix = x * stride + kx - pad;
                if (iy < 0 || iy >= H || ix < 0 || ix >= W) continue;
                s += in.at(n, c, iy, ix) * w.at(o, c, ky, kx);
              }
          out.at(n, o, y, x) = s;
        }
  return out;
}

Errc code_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "no exception";
  return Errc::InvalidParam;
}

ModelConfig tiny_config(int classes = 3) {
  ModelConfig c;
  c.stem_channels = 4;
  c.blocks = {{2, 3}, {2, 3}};
  c.num_classes = classes;
  return c;
}

}  // namespace

TEST(Conv, OnesKernelOnOnesInput) {
  Tensor<double> in({1, 1, 3, 3}, 1.0), w({1, 1, 3, 3}, 1.0), b({1}, 0.0);
  const auto out = conv2d(in, w, b, 1, 1);
  EXPECT_EQ(out.at(0, 0, 1, 1), 9.0);
  EXPECT_EQ(out.at(0, 0, 0, 0), 4.0);
  EXPECT_EQ(out.at(0, 0, 2, 2), 4.0);
  EXPECT_EQ(out.at(0, 0, 0, 1), 6.0);
}

TEST(Conv, IdentityKernelReproducesInput) {
  Rng rng(1);
  const auto in = random_tensor({2, 3, 5, 7}, rng);
  Tensor<double> w({3, 3, 3, 3}, 0.0), b({3}, 0.0);
  for (int c = 0; c < 3; ++c) w.at(c, c, 1, 1) = 1.0;
  EXPECT_EQ(conv2d(in, w, b, 1, 1), in);
}

TEST(Conv, MatchesDirectLoopOracle) {
  Rng rng(2);
  struct Case {
    int n, c, h, w, o, k, stride, pad;
  };
  for (const Case& k : {Case{2, 3, 9, 11, 4, 3, 1, 1}, Case{1, 5, 6, 6, 2, 1, 1, 0},
                        Case{2, 2, 8, 7, 3, 3, 2, 1}, Case{1, 3, 10, 9, 2, 3, 1, 0},
                        Case{1, 4, 300, 5, 3, 3, 1, 1}, Case{3, 1, 4, 4, 1, 5, 1, 2}}) {
    const auto in = random_tensor({k.n, k.c, k.h, k.w}, rng);
    const auto w = random_tensor({k.o, k.c, k.k, k.k}, rng);
    const auto b = random_tensor({k.o}, rng);
    const auto got = conv2d(in, w, b, k.stride, k.pad);
    const auto want = conv_oracle(in, w, b, k.stride, k.pad);
    ASSERT_EQ(got.shape(), want.shape());
    for (std::size_t i = 0; i < got.numel(); ++i) ASSERT_NEAR(got[i], want[i], 1e-12);
  }
}

TEST(Conv, ShapeMismatch) {
  Tensor<double> in({1, 2, 4, 4}), w({1, 3, 3, 3}), b({1});
  EXPECT_EQ(code_of([&] { conv2d(in, w, b, 1, 1); }), Errc::ShapeMismatch);
}

TEST(DenseBlock, ChannelAccountingAndEmptyBlock) {
  Rng rng(3);
  DenseBlockConfig cfg{4, 12};
  const auto in = random_tensor({1, 16, 5, 5}, rng);
  DenseBlockParams<double> p;
  for (int i = 0; i < 4; ++i) {
    p.weights.push_back(random_tensor({12, 16 + 12 * i, 3, 3}, rng, -0.1, 0.1));
    p.biases.push_back(random_tensor({12}, rng));
  }
  const auto out = dense_block_forward(in, cfg, p);
  EXPECT_EQ(out.dim(1), 64);
  // Block input passes through unchanged in the first channels.
  for (int c = 0; c < 16; ++c) EXPECT_EQ(out.at(0, c, 2, 3), in.at(0, c, 2, 3));
  EXPECT_EQ(dense_block_forward(in, DenseBlockConfig{0, 12}, DenseBlockParams<double>{}), in);
}

TEST(DenseBlock, LayerConsumesReluOfConcatenation) {
  Rng rng(4);
  const auto in = random_tensor({1, 2, 4, 4}, rng);
  DenseBlockParams<double> p;
  p.weights = {random_tensor({3, 2, 3, 3}, rng), random_tensor({3, 5, 3, 3}, rng)};
  p.biases = {random_tensor({3}, rng), random_tensor({3}, rng)};
  const auto out = dense_block_forward(in, DenseBlockConfig{2, 3}, p);
  const auto l0 = conv_oracle(relu(in), p.weights[0], p.biases[0], 1, 1);
  Tensor<double> cat({1, 5, 4, 4});
  for (int c = 0; c < 5; ++c)
    for (int y = 0; y < 4; ++y)
      for (int x = 0; x < 4; ++x) cat.at(0, c, y, x) = c < 2 ? in.at(0, c, y, x) : l0.at(0, c - 2, y, x);
  const auto l1 = conv_oracle(relu(cat), p.weights[1], p.biases[1], 1, 1);
  for (int y = 0; y < 4; ++y)
    for (int x = 0; x < 4; ++x)
      for (int c = 0; c < 3; ++c) {
        EXPECT_NEAR(out.at(0, 2 + c, y, x), l0.at(0, c, y, x), 1e-12);
        EXPECT_NEAR(out.at(0, 5 + c, y, x), l1.at(0, c, y, x), 1e-12);
      }
}

TEST(Pooling, GlobalAverage) {
  Tensor<double> t({1, 1, 2, 2}, std::vector<double>{1, 2, 3, 4});
  EXPECT_EQ(global_avg_pool(t)[0], 2.5);
  for (int side : {32, 48}) {
    Tensor<double> c({2, 3, side, side}, 0.75);
    const auto g = global_avg_pool(c);
    for (double v : g.values()) EXPECT_DOUBLE_EQ(v, 0.75);
  }
}

TEST(Pooling, AveragePoolDropsOddEdge) {
  Tensor<double> t({1, 1, 3, 3}, std::vector<double>{1, 2, 9, 3, 4, 9, 9, 9, 9});
  const auto p = avg_pool2(t);
  ASSERT_EQ(p.shape(), (Shape{1, 1, 1, 1}));
  EXPECT_EQ(p[0], 2.5);
}

TEST(Softmax, Examples) {
  const auto uniform = softmax(Tensor<double>({1, 10}, 3.0));
  for (double v : uniform.values()) EXPECT_NEAR(v, 0.1, 1e-15);
  Tensor<double> l({1, 2}, std::vector<double>{std::log(1.0), std::log(3.0)});
  const auto p = softmax(l);
  EXPECT_NEAR(p[0], 0.25, 1e-15);
  EXPECT_NEAR(p[1], 0.75, 1e-15);
  Rng rng(5);
  auto x = random_tensor({4, 6}, rng, -30, 30);
  auto shifted = x;
  for (auto& v : shifted.values()) v += 1000.0;
  const auto a = softmax(x), b = softmax(shifted);
  for (std::size_t i = 0; i < a.numel(); ++i) EXPECT_NEAR(a[i], b[i], 1e-12);
  for (int r = 0; r < 4; ++r) {
    double s = 0;
    for (int c = 0; c < 6; ++c) s += a.at(r, c);
    EXPECT_NEAR(s, 1.0, 1e-6);
  }
}

TEST(CrossEntropy, UniformPredictionTenClasses) {
  const long double oracle = -std::log(0.1L) - 9 * std::log(0.9L);
  EXPECT_NEAR(static_cast<double>(oracle), 3.25083, 1e-5);
  Tensor<double> probs({1, 10}, 0.1);
  for (int label = 0; label < 10; ++label) {
    const double loss = cross_entropy(probs, one_hot<double>({label}, 10));
    EXPECT_NEAR(loss, 3.25083, 1e-4);
    EXPECT_NEAR(loss, static_cast<double>(oracle), 1e-12);
  }
}

TEST(CrossEntropy, PerfectPredictionAndBatchMean) {
  const auto y = one_hot<double>({2}, 4);
  EXPECT_LE(cross_entropy(y, y), 1e-5);
  EXPECT_GE(cross_entropy(y, y), 0.0);
  Tensor<double> one({1, 3}, std::vector<double>{0.2, 0.5, 0.3});
  Tensor<double> two({2, 3}, std::vector<double>{0.2, 0.5, 0.3, 0.2, 0.5, 0.3});
  EXPECT_DOUBLE_EQ(cross_entropy(one, one_hot<double>({1}, 3)),
                   cross_entropy(two, one_hot<double>({1, 1}, 3)));
  // per-class binary terms
  const double expect = -(std::log(1 - 0.2) + std::log(0.5) + std::log(1 - 0.3));
  EXPECT_NEAR(cross_entropy(one, one_hot<double>({1}, 3)), expect, 1e-14);
  EXPECT_NEAR(cross_entropy(one, one_hot<double>({1}, 3), LossKind::Categorical), -std::log(0.5),
              1e-14);
}

TEST(CrossEntropy, NonNegativeOnRandomInputs) {
  Rng rng(6);
  for (int i = 0; i < 200; ++i) {
    const auto p = softmax(random_tensor({3, 5}, rng, -8, 8));
    std::vector<int> labels{static_cast<int>(rng.uniform_int(0, 4)),
                            static_cast<int>(rng.uniform_int(0, 4)),
                            static_cast<int>(rng.uniform_int(0, 4))};
    EXPECT_GE(cross_entropy(p, one_hot<double>(labels, 5)), 0.0);
  }
  EXPECT_THROW(one_hot<double>({5}, 5), Error);
}

TEST(Adam, FirstStepMovesByLearningRate) {
  std::vector<Tensor<double>> params{Tensor<double>({3}, std::vector<double>{1, -2, 0.5})};
  std::vector<Tensor<double>> grads{Tensor<double>({3}, std::vector<double>{0.3, -7, 1e-3})};
  auto state = AdamState<double>::zeros_like(params);
  adam_step(params, grads, state, {});
  EXPECT_NEAR(params[0][0], 1 - 1e-3, 1e-9);
  EXPECT_NEAR(params[0][1], -2 + 1e-3, 1e-9);
  EXPECT_NEAR(params[0][2], 0.5 - 1e-3, 1e-8);
  EXPECT_EQ(state.step, 1);
}

TEST(Adam, ZeroGradientLeavesParameters) {
  std::vector<Tensor<double>> params{Tensor<double>({2}, std::vector<double>{1, 2})};
  std::vector<Tensor<double>> grads{Tensor<double>({2}, 0.0)};
  auto state = AdamState<double>::zeros_like(params);
  adam_step(params, grads, state, {});
  EXPECT_EQ(params[0][0], 1.0);
  EXPECT_EQ(params[0][1], 2.0);
  EXPECT_EQ(state.step, 1);
}

TEST(Adam, QuadraticMatchesScalarSimulation) {
  std::vector<Tensor<double>> params{Tensor<double>({1}, 1.0)};
  auto state = AdamState<double>::zeros_like(params);
  AdamConfig cfg;
  cfg.learning_rate = 0.1;
  double theta = 1.0, m = 0.0, v = 0.0;
  for (int t = 1; t <= 100; ++t) {
    std::vector<Tensor<double>> grads{Tensor<double>({1}, 2.0 * params[0][0])};
    adam_step(params, grads, state, cfg);
    const double g = 2.0 * theta;
    m = 0.9 * m + 0.1 * g;
    v = 0.999 * v + 0.001 * g * g;
    const double mh = m / (1 - std::pow(0.9, t)), vh = v / (1 - std::pow(0.999, t));
    theta -= 0.1 * mh / (std::sqrt(vh) + 1e-8);
    EXPECT_NEAR(params[0][0], theta, 1e-12);
    EXPECT_GE(state.v[0][0], 0.0);
  }
  EXPECT_LT(std::abs(params[0][0]), 0.1);
}

TEST(Adam, NonFiniteGradientLeavesStateUntouched) {
  std::vector<Tensor<double>> params{Tensor<double>({2}, 1.0), Tensor<double>({1}, 3.0)};
  std::vector<Tensor<double>> grads{Tensor<double>({2}, 0.5), Tensor<double>({1}, NAN)};
  auto state = AdamState<double>::zeros_like(params);
  EXPECT_EQ(code_of([&] { adam_step(params, grads, state, {}); }), Errc::NonFiniteGradient);
  EXPECT_EQ(params[0][0], 1.0);
  EXPECT_EQ(state.step, 0);
  EXPECT_EQ(state.m[0][0], 0.0);
  grads.pop_back();
  EXPECT_EQ(code_of([&] { adam_step(params, grads, state, {}); }), Errc::ShapeMismatch);
}

TEST(GradCheck, HarnessSensitivity) {
  Rng rng(7);
  auto x = random_tensor({2, 4}, rng);
  const auto w = random_tensor({3, 4}, rng), b = random_tensor({3}, rng);
  const auto upstream = random_tensor({2, 3}, rng);
  auto f = [&] {
    const auto y = linear(x, w, b);
    double s = 0;
    for (std::size_t i = 0; i < y.numel(); ++i) s += y[i] * upstream[i];
    return s;
  };
  const auto g = linear_backward(x, w, upstream);
  EXPECT_LT(grad_check(f, x.values(), g.input.values()), 1e-6);
  auto bad = g.input;
  for (auto& v : bad.values()) v *= 1.1;
  EXPECT_GT(grad_check(f, x.values(), bad.values()), 1e-2);
}

TEST(GradCheck, ReluAwayFromKink) {
  Rng rng(8);
  auto x = random_tensor({1, 2, 3, 3}, rng);
  for (auto& v : x.values()) v = (v < 0 ? -1 : 1) * (0.01 + std::abs(v));
  const auto up = random_tensor({1, 2, 3, 3}, rng);
  auto f = [&] {
    const auto y = relu(x);
    double s = 0;
    for (std::size_t i = 0; i < y.numel(); ++i) s += y[i] * up[i];
    return s;
  };
  EXPECT_LT(grad_check(f, x.values(), relu_backward(x, up).values()), 1e-4);
}

TEST(GradCheck, SuiteAcrossTwentySeeds) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto entries = gradient_suite(seed);
    ASSERT_FALSE(entries.empty());
    bool has_model = false;
    for (const auto& e : entries) {
      EXPECT_TRUE(e.passed()) << "seed " << seed << " " << e.name << " " << e.max_rel_error;
      EXPECT_LE(e.tolerance, e.name.rfind("model", 0) == 0 ? 1e-3 : 1e-4) << e.name;
      has_model |= e.name.rfind("model", 0) == 0;
    }
    EXPECT_TRUE(has_model);
  }
}

TEST(Model, ParameterCountGoldenValues) {
  ModelConfig c;  // stem 16, three (4, 12) blocks, 10 classes
  EXPECT_EQ(c.parameter_count(), 68146u);
  c.num_classes = 3;
  EXPECT_EQ(c.parameter_count(), 67523u);
  EXPECT_EQ(c.feature_channels(), 88);
  EXPECT_EQ(c.block_input_channels(1), 32);
  EXPECT_EQ(c.min_input_size(), 4);
  // stem 4*27+4, block (3*4*9+3) + (3*7*9+3), transition 10*5+5,
  // block (3*5*9+3) + (3*8*9+3), head 11*3+3
  EXPECT_EQ(tiny_config().parameter_count(), 112u + 111u + 192u + 55u + 138u + 219u + 36u);
}

TEST(Model, ForwardContract) {
  Model<double> m(tiny_config());
  m.initialize(1);
  Rng rng(9);
  for (int side : {16, 24, 19}) {
    const auto x = random_tensor({2, 3, side, side}, rng, 0, 1);
    const auto p = m.forward(x);
    ASSERT_EQ(p.shape(), (Shape{2, 3}));
    for (int r = 0; r < 2; ++r) EXPECT_NEAR(p.at(r, 0) + p.at(r, 1) + p.at(r, 2), 1.0, 1e-12);
    EXPECT_EQ(m.forward(x), p);
  }
  EXPECT_EQ(code_of([&] { m.forward(Tensor<double>({1, 3, 1, 1})); }), Errc::ShapeMismatch);
  EXPECT_EQ(code_of([&] { m.forward(Tensor<double>({1, 2, 8, 8})); }), Errc::ShapeMismatch);
}

TEST(Model, InitializationIsSeededGlorot) {
  Model<double> a(tiny_config()), b(tiny_config()), c(tiny_config());
  a.initialize(5);
  b.initialize(5);
  c.initialize(6);
  EXPECT_EQ(a.parameters(), b.parameters());
  EXPECT_NE(a.parameters(), c.parameters());
  const auto& stem = a.parameter("stem.weight");
  const double limit = std::sqrt(6.0 / (3 * 9 + 4 * 9));
  for (double v : stem.values()) EXPECT_LE(std::abs(v), limit);
  for (double v : a.parameter("stem.bias").values()) EXPECT_EQ(v, 0.0);
  EXPECT_THROW(a.parameter("nope"), Error);
}

TEST(Model, GradientsCoverEveryParameter) {
  Model<double> m(tiny_config());
  m.initialize(2);
  Rng rng(10);
  const auto x = random_tensor({2, 3, 16, 16}, rng, 0, 1);
  const auto lg = m.loss_and_gradients(x, one_hot<double>({0, 2}, 3));
  ASSERT_EQ(lg.grads.size(), m.parameters().size());
  for (std::size_t i = 0; i < lg.grads.size(); ++i) {
    EXPECT_EQ(lg.grads[i].shape(), m.parameters()[i].shape()) << m.names()[i];
    EXPECT_TRUE(lg.grads[i].all_finite());
  }
  EXPECT_NEAR(lg.loss, cross_entropy(m.forward(x), one_hot<double>({0, 2}, 3)), 1e-12);
}

TEST(Checkpoint, RoundTripIsBitExact) {
  TempDir dir;
  Model<float> m(tiny_config());
  m.initialize(3);
  save_checkpoint(m, dir / "m.ckpt");
  const auto back = load_checkpoint<float>(dir / "m.ckpt");
  EXPECT_EQ(back.config(), m.config());
  EXPECT_EQ(back.parameters(), m.parameters());
  EXPECT_EQ(back.names(), m.names());
  const auto bytes = read_file(dir / "m.ckpt");
  EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + 4), "CMID");
  EXPECT_EQ(read_checkpoint_info(bytes).precision, "f32");
  // f32 widened to f64 is exact
  const auto wide = deserialize_checkpoint<double>(bytes);
  for (std::size_t i = 0; i < wide.parameters().size(); ++i) {
    EXPECT_EQ(wide.parameters()[i], m.parameters()[i].cast<double>());
  }
}

TEST(Checkpoint, RejectsDamagedFiles) {
  Model<double> m(tiny_config());
  m.initialize(4);
  const auto bytes = serialize_checkpoint(m);
  std::vector<std::uint8_t> cut(bytes.begin(), bytes.end() - 5);
  EXPECT_EQ(code_of([&] { deserialize_checkpoint<double>(cut); }), Errc::FormatError);
  auto extra = bytes;
  extra.push_back(0);
  EXPECT_EQ(code_of([&] { deserialize_checkpoint<double>(extra); }), Errc::FormatError);
  auto magic = bytes;
  magic[0] = 'X';
  EXPECT_EQ(code_of([&] { deserialize_checkpoint<double>(magic); }), Errc::FormatError);
  auto version = bytes;
  version[4] = 9;
  EXPECT_EQ(code_of([&] { deserialize_checkpoint<double>(version); }), Errc::FormatError);
  TempDir dir;
  EXPECT_EQ(code_of([&] { load_checkpoint<double>(dir / "missing.ckpt"); }), Errc::IoError);
}

TEST(Checkpoint, HeadMismatchNamesTheLayer) {
  Model<double> five(tiny_config(5));
  five.initialize(1);
  try {
    deserialize_checkpoint<double>(serialize_checkpoint(five), tiny_config(10));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::FormatError);
    EXPECT_NE(std::string(e.what()).find("head.weight"), std::string::npos) << e.what();
  }
}

TEST(Checkpoint, ConfigJsonRejectsUnknownKeys) {
  nlohmann::json j;
  to_json(j, tiny_config());
  ModelConfig back;
  from_json(j, back);
  EXPECT_EQ(back, tiny_config());
  j["dropout"] = 0.5;
  EXPECT_EQ(code_of([&] { from_json(j, back); }), Errc::ConfigError);
}
