#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "nd/features.hpp"
#include "nd/gesture.hpp"

namespace nd {

// Layer widths of the conv + GRU decoder:
// conv1d(time) -> batch-norm -> ReLU -> GRU -> last hidden -> dropout ->
// linear -> ReLU -> linear -> sigmoid.
struct ModelConfig {
  std::size_t input_rows = 224;
  std::size_t steps = 50;
  std::size_t conv_out = 256;
  std::size_t conv_kernel = 3;
  std::size_t gru_hidden = 256;
  std::size_t fc_hidden = 64;
  std::size_t outputs = kDofCount;
  double dropout_rate = 0.5;

  void validate() const;
  std::size_t parameter_count() const;

  // Reduced widths used for the desk-scale training benchmarks.
  static ModelConfig compact(std::size_t input_rows, std::size_t steps);
  // Small enough for exhaustive finite-difference gradient checks.
  static ModelConfig tiny();

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

struct ParamTensor {
  std::string name;
  std::vector<std::size_t> shape;
  std::vector<double> values;

  ParamTensor() = default;
  ParamTensor(std::string n, std::vector<std::size_t> s);
  std::size_t size() const { return values.size(); }
  double* data() { return values.data(); }
  const double* data() const { return values.data(); }
};

// Weights are stored input-major so forward passes are row-vector products:
// conv_w[k][row][c], gru_wi[c][gate], gru_wh[h][gate], fc1_w[h][f], fc2_w[f][o].
// GRU gates are laid out [reset | update | candidate].
struct ModelParams {
  ModelConfig config;
  ParamTensor conv_w, conv_b;
  ParamTensor bn_gamma, bn_beta;
  ParamTensor bn_mean, bn_var;  // running statistics, not trained
  ParamTensor gru_wi, gru_wh, gru_b;
  ParamTensor fc1_w, fc1_b;
  ParamTensor fc2_w, fc2_b;

  ModelParams() = default;
  explicit ModelParams(const ModelConfig& cfg);  // zero weights, unit BN scale/variance

  std::vector<ParamTensor*> trainable();
  std::vector<const ParamTensor*> trainable() const;
  std::vector<ParamTensor*> all();
  std::vector<const ParamTensor*> all() const;
  std::size_t trainable_count() const;

  // Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights, zero biases.
  void init_uniform(std::mt19937_64& rng);
  void set_zero();
  void round_to_float();
  bool all_finite() const;
};

enum class Mode { Train, Eval };

using Probabilities = std::array<double, kDofCount>;

// Eval-mode forward of one example (running BN statistics, no dropout).
Probabilities forward(TensorView input, const ModelParams& params);

// Eval-mode forward over a window that slides along one column stream.
// Convolution, batch-norm and GRU input projections of interior columns are
// cached by absolute column index, so advancing the window only costs the new
// columns, the two padded edges and the recurrence. Bit-identical to
// forward() on the same window.
class SlidingForward {
 public:
  explicit SlidingForward(const ModelParams& params);

  // window holds the steps() normalized columns ending at stream column last.
  // Columns must not change once seen; call reset() when starting a new stream.
  Probabilities operator()(TensorView window, std::size_t last);
  void reset();
  std::size_t cached() const { return cache_count_; }

 private:
  void input_projection(TensorView window, std::size_t t, double* gi);

  const ModelParams* p_;
  std::vector<double> inv_std_;
  std::vector<double> cache_;  // GRU input projections [slot][3h]
  std::vector<std::size_t> cache_col_;
  std::size_t cache_count_ = 0;
  std::vector<double> z_, gi_, h_, hn_, gh_rz_, gh_n_, q_, u_, logits_;
};

// Batched forward. Train mode uses batch statistics and, when dropout_rng is
// given, inverted dropout on the final hidden state.
std::vector<Probabilities> forward_batch(std::span<const TensorView> inputs, const ModelParams& params, Mode mode,
                                         std::mt19937_64* dropout_rng = nullptr);

// Mean per-DOF binary cross-entropy with probabilities clamped to
// [1e-7, 1 - 1e-7].
double loss(const Probabilities& p, GestureLabel target);

struct BackwardOptions {
  std::mt19937_64* dropout_rng = nullptr;  // nullptr disables dropout
  bool update_running_stats = false;
  double bn_momentum = 0.1;
};

// Train-mode forward and exact backward pass of the mean batch loss.
// grads must share params' config; it is overwritten. Returns the loss.
double backward(std::span<const TensorView> inputs, std::span<const GestureLabel> targets, ModelParams& params,
                ModelParams& grads, const BackwardOptions& opts = {});

// Bit d set iff p[d] >= 0.5.
GestureLabel threshold(const Probabilities& p);

inline constexpr double kBatchNormEps = 1e-5;
inline constexpr double kProbClamp = 1e-7;

}  // namespace nd
