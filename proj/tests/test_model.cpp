#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "nd/error.hpp"
#include "nd/model.hpp"
#include "oracle.hpp"

using namespace nd;

namespace {

std::vector<double> random_input(const ModelConfig& c, std::mt19937_64& rng) {
  std::normal_distribution<double> g(0.0, 1.0);
  std::vector<double> x(c.input_rows * c.steps);
  for (auto& v : x) v = g(rng);
  return x;
}

ModelParams random_params(const ModelConfig& c, std::uint64_t seed) {
  ModelParams p(c);
  std::mt19937_64 rng(seed);
  p.init_uniform(rng);
  // Non-trivial BN and biases so every term of the oracle is exercised.
  std::uniform_real_distribution<double> u(-0.3, 0.3);
  for (auto* t : {&p.conv_b, &p.bn_beta, &p.gru_b, &p.fc1_b, &p.fc2_b, &p.bn_mean})
    for (auto& v : t->values) v = u(rng);
  for (auto& v : p.bn_gamma.values) v = 1.0 + u(rng);
  for (auto& v : p.bn_var.values) v = 1.0 + u(rng);
  return p;
}

double train_loss(std::span<const TensorView> xs, std::span<const GestureLabel> ys, const ModelParams& p) {
  const auto probs = forward_batch(xs, p, Mode::Train);
  double s = 0;
  for (std::size_t i = 0; i < xs.size(); ++i) s += loss(probs[i], ys[i]);
  return s / static_cast<double>(xs.size());
}

}  // namespace

TEST(Model, DefaultParameterCount) {
  ModelConfig c;
  ModelParams p(c);
  EXPECT_EQ(c.parameter_count(), 583622u);
  EXPECT_EQ(p.trainable_count(), c.parameter_count());
}

TEST(Model, ZeroWeightsGiveHalf) {
  ModelConfig c = ModelConfig::tiny();
  ModelParams p(c);
  p.set_zero();
  std::vector<double> x(c.input_rows * c.steps, 0.0);
  const auto out = forward({x.data(), c.input_rows, c.steps}, p);
  for (double v : out) EXPECT_EQ(v, 0.5);
}

TEST(Model, ForwardMatchesOracle) {
  ModelConfig c = ModelConfig::tiny();
  c.conv_kernel = 3;
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    const auto p = random_params(c, seed);
    std::mt19937_64 rng(seed + 100);
    const auto x = random_input(c, rng);
    const auto got = forward({x.data(), c.input_rows, c.steps}, p);
    const auto want = oracle::forward(p, x);
    for (std::size_t o = 0; o < 6; ++o) EXPECT_NEAR(got[o], want[o], 1e-10);
  }
}

TEST(Model, ForwardMatchesOracleEvenKernel) {
  ModelConfig c = ModelConfig::tiny();
  c.conv_kernel = 4;
  const auto p = random_params(c, 9);
  std::mt19937_64 rng(5);
  const auto x = random_input(c, rng);
  const auto got = forward({x.data(), c.input_rows, c.steps}, p);
  const auto want = oracle::forward(p, x);
  for (std::size_t o = 0; o < 6; ++o) EXPECT_NEAR(got[o], want[o], 1e-10);
}

TEST(Model, EvalForwardDeterministic) {
  ModelConfig c = ModelConfig::tiny();
  const auto p = random_params(c, 4);
  std::mt19937_64 rng(1);
  const auto x = random_input(c, rng);
  const TensorView v{x.data(), c.input_rows, c.steps};
  EXPECT_EQ(forward(v, p), forward(v, p));
}

TEST(Model, ShapeMismatchThrows) {
  ModelConfig c = ModelConfig::tiny();
  ModelParams p(c);
  std::vector<double> x(c.input_rows * (c.steps + 1));
  EXPECT_THROW(forward({x.data(), c.input_rows, c.steps + 1}, p), ConfigError);
}

TEST(Model, LossExamples) {
  Probabilities half;
  half.fill(0.5);
  EXPECT_NEAR(loss(half, GestureLabel::parse("101010")), std::log(2.0), 1e-15);
  Probabilities p{0.9, 0.1, 0.1, 0.1, 0.1, 0.1};
  EXPECT_NEAR(loss(p, GestureLabel::parse("100000")), -std::log(0.9), 1e-15);
  Probabilities exact{1, 0, 0, 0, 0, 0};
  EXPECT_NEAR(loss(exact, GestureLabel::parse("100000")), -std::log(1 - 1e-7), 1e-18);
}

TEST(Model, ThresholdBoundary) {
  Probabilities half;
  half.fill(0.5);
  EXPECT_EQ(threshold(half).str(), "111111");
  EXPECT_EQ(threshold({0.9, 0.1, 0.1, 0.1, 0.1, 0.1}).str(), "100000");
  EXPECT_EQ(threshold({0.49, 0.51, 0.49, 0.51, 0.49, 0.51}).str(), "010101");
}

TEST(Model, GradientMatchesFiniteDifferences) {
  const ModelConfig c = ModelConfig::tiny();
  ModelParams p = random_params(c, 11);
  std::mt19937_64 rng(12);
  std::vector<std::vector<double>> data;
  std::vector<TensorView> xs;
  std::vector<GestureLabel> ys;
  for (int i = 0; i < 4; ++i) data.push_back(random_input(c, rng));
  for (auto& d : data) xs.push_back({d.data(), c.input_rows, c.steps});
  for (const char* g : {"100000", "011000", "000001", "111110"}) ys.push_back(GestureLabel::parse(g));

  ModelParams grads(c);
  backward(xs, ys, p, grads);
  constexpr double h = 1e-5;
  auto pt = p.trainable();
  auto gt = grads.trainable();
  double worst = 0;
  for (std::size_t t = 0; t < pt.size(); ++t) {
    for (std::size_t i = 0; i < pt[t]->size(); ++i) {
      double& w = pt[t]->values[i];
      const double saved = w;
      w = saved + h;
      const double lp = train_loss(xs, ys, p);
      w = saved - h;
      const double lm = train_loss(xs, ys, p);
      w = saved;
      const double num = (lp - lm) / (2 * h);
      const double ana = gt[t]->values[i];
      const double rel = std::fabs(num - ana) / std::max({std::fabs(num), std::fabs(ana), 1e-6});
      worst = std::max(worst, rel);
      EXPECT_LT(rel, 1e-4) << pt[t]->name << "[" << i << "] analytic " << ana << " numeric " << num;
    }
  }
  RecordProperty("worst_relative_error", std::to_string(worst));
}

TEST(Model, DuplicatedBatchGradientEqualsSingle) {
  const ModelConfig c = ModelConfig::tiny();
  ModelParams p = random_params(c, 21);
  std::mt19937_64 rng(22);
  const auto a = random_input(c, rng);
  const auto b = random_input(c, rng);
  std::vector<TensorView> pair{{a.data(), c.input_rows, c.steps}, {b.data(), c.input_rows, c.steps}};
  std::vector<GestureLabel> ys{GestureLabel::parse("100000"), GestureLabel::parse("000011")};
  std::vector<TensorView> quad{pair[0], pair[1], pair[0], pair[1]};
  std::vector<GestureLabel> yq{ys[0], ys[1], ys[0], ys[1]};
  ModelParams g1(c), g2(c);
  backward(pair, ys, p, g1);
  backward(quad, yq, p, g2);
  auto t1 = g1.trainable();
  auto t2 = g2.trainable();
  for (std::size_t t = 0; t < t1.size(); ++t)
    for (std::size_t i = 0; i < t1[t]->size(); ++i)
      EXPECT_NEAR(t1[t]->values[i], t2[t]->values[i], 1e-12 * std::max(1.0, std::fabs(t1[t]->values[i])));
}

TEST(Model, SigmoidOutputsInsideUnitInterval) {
  const ModelConfig c = ModelConfig::tiny();
  const auto p = random_params(c, 31);
  std::mt19937_64 rng(32);
  for (int i = 0; i < 20; ++i) {
    const auto x = random_input(c, rng);
    for (double v : forward({x.data(), c.input_rows, c.steps}, p)) {
      EXPECT_GT(v, 0.0);
      EXPECT_LT(v, 1.0);
    }
  }
}

TEST(Model, RoundToFloatIsIdempotent) {
  auto p = random_params(ModelConfig::tiny(), 41);
  p.round_to_float();
  auto q = p;
  q.round_to_float();
  for (std::size_t t = 0; t < p.all().size(); ++t) EXPECT_EQ(p.all()[t]->values, q.all()[t]->values);
}

TEST(SlidingForward, BitIdenticalToFullForward) {
  for (std::size_t kernel : {3U, 4U, 1U}) {
    auto cfg = ModelConfig::tiny();
    cfg.conv_kernel = kernel;
    ModelParams p(cfg);
    std::mt19937_64 rng(kernel);
    p.init_uniform(rng);
    std::normal_distribution<double> n(0.0, 1.0);
    for (auto& v : p.bn_mean.values) v = 0.1 * n(rng);
    for (auto& v : p.bn_var.values) v = 1.0 + 0.2 * std::fabs(n(rng));

    const std::size_t cols = 60;
    std::vector<double> stream(cols * cfg.input_rows);
    for (auto& v : stream) v = n(rng);
    SlidingForward slide(p);
    std::size_t reused = 0;
    // Advance by varying strides, including a jump that invalidates the cache.
    for (std::size_t last : {4U, 5U, 6U, 9U, 10U, 11U, 14U, 30U, 31U, 59U}) {
      const TensorView w{stream.data() + (last + 1 - cfg.steps) * cfg.input_rows, cfg.input_rows, cfg.steps};
      EXPECT_EQ(slide(w, last), forward(w, p)) << "kernel " << kernel << " last " << last;
      reused += slide.cached();
    }
    if (kernel > 1) {
      EXPECT_GT(reused, 0U);
    }
  }
}
