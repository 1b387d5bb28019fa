#include <gtest/gtest.h>

#include <omp.h>

#include <random>

#include "nd/kernels.hpp"
#include "nd/model.hpp"

using namespace nd;

namespace {

std::vector<double> rand_mat(std::mt19937_64& rng, std::size_t n, double zero_frac = 0.0) {
  std::normal_distribution<double> g;
  std::uniform_real_distribution<double> u(0, 1);
  std::vector<double> v(n);
  for (auto& x : v) x = u(rng) < zero_frac ? 0.0 : g(rng);
  return v;
}

class ThreadGuard {
 public:
  explicit ThreadGuard(int n) : saved_(omp_get_max_threads()) { omp_set_num_threads(n); }
  ~ThreadGuard() { omp_set_num_threads(saved_); }

 private:
  int saved_;
};

struct Shape {
  std::size_t n, k, m;
};

const Shape kShapes[] = {{1, 7, 5}, {3, 300, 768}, {64, 96, 96}, {500, 224, 32}, {2, 2, 2}};

}  // namespace

TEST(Kernels, GemmNnMatchesSerialAndOracle) {
  ThreadGuard threads(4);
  std::mt19937_64 rng(1);
  for (const auto& s : kShapes) {
    const auto a = rand_mat(rng, s.n * s.k), b = rand_mat(rng, s.k * s.m), c0 = rand_mat(rng, s.n * s.m);
    for (bool acc : {false, true}) {
      auto c1 = c0, c2 = c0;
      kernels::gemm_nn(a.data(), s.k, b.data(), s.m, c1.data(), s.m, s.n, s.k, s.m, acc);
      kernels::serial::gemm_nn(a.data(), s.k, b.data(), s.m, c2.data(), s.m, s.n, s.k, s.m, acc);
      EXPECT_EQ(c1, c2);
      for (std::size_t i = 0; i < s.n; ++i)
        for (std::size_t j = 0; j < s.m; ++j) {
          double want = acc ? c0[i * s.m + j] : 0.0;
          for (std::size_t p = 0; p < s.k; ++p) want += a[i * s.k + p] * b[p * s.m + j];
          EXPECT_NEAR(c1[i * s.m + j], want, 1e-10);
        }
    }
  }
}

TEST(Kernels, GemmTnMatchesSerialAndOracle) {
  ThreadGuard threads(4);
  std::mt19937_64 rng(2);
  for (const auto& s : kShapes) {
    const auto a = rand_mat(rng, s.n * s.k, 0.3), b = rand_mat(rng, s.n * s.m), c0 = rand_mat(rng, s.k * s.m);
    auto c1 = c0, c2 = c0;
    kernels::gemm_tn_acc(a.data(), s.k, b.data(), s.m, c1.data(), s.m, s.n, s.k, s.m);
    kernels::serial::gemm_tn_acc(a.data(), s.k, b.data(), s.m, c2.data(), s.m, s.n, s.k, s.m);
    EXPECT_EQ(c1, c2);
    for (std::size_t p = 0; p < s.k; ++p)
      for (std::size_t j = 0; j < s.m; ++j) {
        double want = c0[p * s.m + j];
        for (std::size_t i = 0; i < s.n; ++i) want += a[i * s.k + p] * b[i * s.m + j];
        EXPECT_NEAR(c1[p * s.m + j], want, 1e-10);
      }
  }
}

TEST(Kernels, GemmNtMatchesSerialAndOracle) {
  ThreadGuard threads(4);
  std::mt19937_64 rng(3);
  for (const auto& s : kShapes) {
    // C[n x k] = A[n x m] B[k x m]^T
    const auto a = rand_mat(rng, s.n * s.m), b = rand_mat(rng, s.k * s.m), c0 = rand_mat(rng, s.n * s.k);
    for (bool acc : {false, true}) {
      auto c1 = c0, c2 = c0;
      kernels::gemm_nt(a.data(), s.m, b.data(), s.m, c1.data(), s.k, s.n, s.m, s.k, acc);
      kernels::serial::gemm_nt(a.data(), s.m, b.data(), s.m, c2.data(), s.k, s.n, s.m, s.k, acc);
      EXPECT_EQ(c1, c2);
      for (std::size_t i = 0; i < s.n; ++i)
        for (std::size_t p = 0; p < s.k; ++p) {
          double want = acc ? c0[i * s.k + p] : 0.0;
          for (std::size_t j = 0; j < s.m; ++j) want += a[i * s.m + j] * b[p * s.m + j];
          EXPECT_NEAR(c1[i * s.k + p], want, 1e-10);
        }
    }
  }
}

TEST(Kernels, ForwardIndependentOfThreadCount) {
  ModelConfig c = ModelConfig::compact(112, 50);
  ModelParams p(c);
  std::mt19937_64 rng(4);
  p.init_uniform(rng);
  const auto x = rand_mat(rng, 8 * c.input_rows * c.steps);
  std::vector<TensorView> xs;
  for (std::size_t i = 0; i < 8; ++i) xs.push_back({x.data() + i * c.input_rows * c.steps, c.input_rows, c.steps});
  std::vector<Probabilities> one, four;
  {
    ThreadGuard t(1);
    one = forward_batch(xs, p, Mode::Eval);
  }
  {
    ThreadGuard t(4);
    four = forward_batch(xs, p, Mode::Eval);
  }
  EXPECT_EQ(one, four);
}
