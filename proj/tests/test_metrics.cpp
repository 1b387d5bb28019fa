#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <sstream>

#include "nd/error.hpp"
#include "nd/metrics.hpp"

using namespace nd;

namespace {
std::vector<GestureLabel> random_labels(std::mt19937_64& rng, std::size_t n) {
  std::uniform_int_distribution<int> u(0, 63);
  std::vector<GestureLabel> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back(GestureLabel::from_mask(static_cast<std::uint8_t>(u(rng))));
  return out;
}
}  // namespace

TEST(Metrics, ConfusionIdentityAndComplement) {
  std::mt19937_64 rng(1);
  const auto t = random_labels(rng, 300);
  for (const auto& d : confusion(t, t).dof) {
    EXPECT_EQ(d.fp, 0u);
    EXPECT_EQ(d.fn, 0u);
  }
  std::vector<GestureLabel> comp;
  for (auto g : t) comp.push_back(GestureLabel::from_mask(static_cast<std::uint8_t>(~g.mask())));
  for (const auto& d : confusion(comp, t).dof) {
    EXPECT_EQ(d.tp, 0u);
    EXPECT_EQ(d.tn, 0u);
  }
}

TEST(Metrics, ConfusionMatchesScalarLoop) {
  std::mt19937_64 rng(1000);
  const auto p = random_labels(rng, 1000);
  const auto t = random_labels(rng, 1000);
  const auto c = confusion(p, t);
  for (std::size_t d = 0; d < 6; ++d) {
    DofCounts want;
    for (std::size_t i = 0; i < 1000; ++i) {
      const bool a = (p[i].mask() >> d) & 1, b = (t[i].mask() >> d) & 1;
      if (a && b) ++want.tp;
      if (!a && !b) ++want.tn;
      if (a && !b) ++want.fp;
      if (!a && b) ++want.fn;
    }
    EXPECT_EQ(c.dof[d], want);
    EXPECT_EQ(c.dof[d].total(), 1000u);
  }
  EXPECT_THROW(confusion(std::span(p).first(3), t), DataError);
}

TEST(Metrics, BalancedAccuracyExamples) {
  auto m = balanced_accuracy(DofCounts{1, 1, 0, 0});
  EXPECT_EQ(m.bal_acc, 1.0);
  EXPECT_EQ(m.pred_error, 0.0);
  m = balanced_accuracy(DofCounts{0, 10, 0, 10});
  EXPECT_EQ(m.bal_acc, 0.5);
  // TPR 0.946, TNR 0.999
  m = balanced_accuracy(DofCounts{946, 999, 1, 54});
  EXPECT_NEAR(m.tpr, 0.946, 1e-12);
  EXPECT_NEAR(m.tnr, 0.999, 1e-12);
  EXPECT_NEAR(m.bal_acc, 0.9725, 1e-12);
  EXPECT_TRUE(m.defined);
  EXPECT_FALSE(balanced_accuracy(DofCounts{0, 5, 1, 0}).defined);
}

TEST(Metrics, BalancedAccuracySymmetric) {
  std::mt19937_64 rng(4);
  std::uniform_int_distribution<int> u(1, 500);
  for (int i = 0; i < 100; ++i) {
    DofCounts c{static_cast<std::uint64_t>(u(rng)), static_cast<std::uint64_t>(u(rng)),
                static_cast<std::uint64_t>(u(rng)), static_cast<std::uint64_t>(u(rng))};
    DofCounts s{c.tn, c.tp, c.fn, c.fp};
    EXPECT_DOUBLE_EQ(balanced_accuracy(c).bal_acc, balanced_accuracy(s).bal_acc);
  }
}

TEST(Metrics, MeanSkipsUndefined) {
  std::array<DofMetrics, 6> m{};
  m[0] = balanced_accuracy(DofCounts{1, 1, 0, 0});
  m[1] = balanced_accuracy(DofCounts{0, 10, 0, 10});
  EXPECT_DOUBLE_EQ(mean_balanced_accuracy(m), 0.75);
  EXPECT_DOUBLE_EQ(mean_prediction_error(m), 0.25);
}

TEST(Metrics, AlignNearestTiesToEarlier) {
  std::vector<double> pred{0.0, 1.0, 2.0}, truth{0.4, 0.5, 0.6, 1.9, 5.0, -1.0};
  std::sort(truth.begin(), truth.end());
  const auto idx = align_nearest(pred, truth);
  EXPECT_EQ(idx, (std::vector<std::size_t>{0, 0, 0, 1, 2, 2}));
}

TEST(Metrics, InfoPerTrialFiveBits) {
  std::vector<GestureLabel> others;
  for (const char* g : {"100000", "010000", "001000", "000100", "000010", "111110", "110000", "000001"})
    others.push_back(GestureLabel::parse(g));
  const auto d = GestureDistribution::rest_half(others);
  EXPECT_NEAR(info_per_trial(d, 2), 5.0, 1e-12);
  GestureDistribution two{{{GestureLabel::parse("100000"), 0.5}, {GestureLabel::parse("010000"), 0.5}}};
  EXPECT_NEAR(info_per_trial(two, 2), 2.0, 1e-12);
  EXPECT_NEAR(entropy_bits(std::vector<double>{0.25, 0.25, 0.25, 0.25}), 2.0, 1e-12);
  EXPECT_EQ(entropy_bits(std::vector<double>{1.0, 0.0}), 0.0);
  EXPECT_NEAR(info_per_trial(d, 3), 1.5 * info_per_trial(d, 2), 1e-12);
  GestureDistribution bad{{{GestureLabel::parse("100000"), 0.6}, {GestureLabel::parse("010000"), 0.5}}};
  EXPECT_THROW(info_per_trial(bad, 1), ConfigError);
}

TEST(Metrics, UniformMaximizesEntropy) {
  std::mt19937_64 rng(6);
  std::uniform_real_distribution<double> u(0.01, 1.0);
  for (std::size_t n = 2; n <= 9; ++n) {
    const std::vector<double> uni(n, 1.0 / static_cast<double>(n));
    const double hmax = entropy_bits(uni);
    EXPECT_NEAR(hmax, std::log2(static_cast<double>(n)), 1e-12);
    for (int k = 0; k < 20; ++k) {
      std::vector<double> p(n);
      double s = 0;
      for (auto& v : p) s += (v = u(rng));
      for (auto& v : p) v /= s;
      EXPECT_LE(entropy_bits(p), hmax + 1e-12);
    }
  }
}

TEST(Metrics, Throughput) {
  const auto t = information_throughput(0.992, 5.0, 0.81);
  EXPECT_NEAR(t.bps, 6.123456790123457, 1e-12);
  EXPECT_LE(std::fabs(t.bps - 6.09), 0.05);
  EXPECT_EQ(t.bpm, 60 * t.bps);
  const auto one = information_throughput(1.0, 5.0, 1.0);
  EXPECT_EQ(one.bps, 5.0);
  EXPECT_EQ(one.bpm, 300.0);
  EXPECT_EQ(information_throughput(0.0, 5.0, 0.8).bps, 0.0);
  EXPECT_THROW(information_throughput(1.0, 5.0, 0.0), ConfigError);
}

TEST(Metrics, Reports) {
  ConfusionCounts c;
  for (auto& d : c.dof) d = DofCounts{9, 80, 1, 10};
  const auto m = balanced_accuracy(c);
  std::ostringstream jl, table;
  write_metrics_jsonl(jl, c, m);
  std::size_t lines = 0;
  for (char ch : jl.str()) lines += ch == '\n';
  EXPECT_EQ(lines, 6u);
  print_metrics_table(table, m);
  EXPECT_NE(table.str().find("thumb"), std::string::npos);
  EXPECT_NE(metrics_summary_json(c, m).find("mean_bal_acc"), std::string::npos);
}
