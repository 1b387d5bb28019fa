#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "nd/features.hpp"
#include "nd/gesture.hpp"
#include "nd/metrics.hpp"
#include "nd/model.hpp"

namespace nd {

struct TrainConfig {
  double beta1 = 0.99;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  double weight_decay = 1e-5;
  std::size_t batch_size = 64;
  double lr0 = 1e-4;
  std::size_t max_epochs = 5;
  std::size_t plateau_epochs = 2;
  double lr_drop_factor = 10.0;
  // Relative improvement a new epoch loss must show to reset the plateau count.
  double plateau_threshold = 1e-4;
  std::vector<std::uint64_t> seeds{1};
  // Replaces the shuffle stream derived from the seed (non-degeneracy checks).
  std::optional<std::uint64_t> shuffle_seed;

  void validate() const;
};

// One labelled decoder input: the window of `steps` columns ending at `column`
// of stream `stream`.
struct Example {
  std::uint32_t stream = 0;
  std::size_t column = 0;
  GestureLabel label;

  friend auto operator<=>(const Example&, const Example&) = default;
};

// Normalized feature streams plus the examples drawn from them.
class TrainingSet {
 public:
  explicit TrainingSet(std::size_t steps) : steps_(steps) {}

  std::uint32_t add_stream(FeatureMatrix normalized);
  void add_example(std::uint32_t stream, std::size_t column, GestureLabel label);

  std::size_t size() const { return examples_.size(); }
  bool empty() const { return examples_.empty(); }
  std::size_t steps() const { return steps_; }
  std::size_t rows() const { return streams_.empty() ? 0 : streams_.front().rows(); }
  TensorView input(std::size_t i) const;
  GestureLabel label(std::size_t i) const { return examples_[i].label; }
  const Example& example(std::size_t i) const { return examples_[i]; }
  const std::vector<Example>& examples() const { return examples_; }
  std::vector<Example>& examples() { return examples_; }
  const FeatureMatrix& stream(std::uint32_t s) const { return streams_[s]; }

 private:
  std::size_t steps_;
  std::vector<FeatureMatrix> streams_;
  std::vector<Example> examples_;
};

// Adam with decoupled weight decay.
class Adam {
 public:
  Adam(const ModelParams& shape, const TrainConfig& cfg);
  void step(ModelParams& params, const ModelParams& grads, double lr);
  std::size_t steps_taken() const { return t_; }

 private:
  double beta1_, beta2_, eps_, weight_decay_;
  std::size_t t_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

struct TrainHistory {
  std::uint64_t seed = 0;
  std::vector<double> epoch_loss;
  std::vector<double> epoch_lr;             // learning rate used during each epoch
  std::vector<std::size_t> lr_drop_epochs;  // 1-based epochs after which the rate dropped
  double final_loss = 0;
};

struct TrainedModel {
  ModelParams params;
  TrainHistory history;
};

// Initialization, shuffling and dropout all derive from `seed`; equal seeds
// give bit-identical parameters. Final parameters are rounded to float32 so
// they survive checkpointing unchanged.
TrainedModel train(const TrainingSet& data, const ModelConfig& model_cfg, const TrainConfig& cfg, std::uint64_t seed);

// Eval-mode thresholded predictions for every example, in example order.
std::vector<GestureLabel> predict_labels(const ModelParams& params, const TrainingSet& data);
std::vector<Probabilities> predict_probabilities(const ModelParams& params, const TrainingSet& data);
std::array<DofMetrics, kDofCount> evaluate(const ModelParams& params, const TrainingSet& data);

struct SeedOutcome {
  std::uint64_t seed = 0;
  double validation_score = 0;  // mean per-DOF balanced accuracy
  TrainHistory history;
};

struct MultiSeedResult {
  TrainedModel best;
  std::size_t best_index = 0;
  std::vector<SeedOutcome> candidates;  // in seed order
};

// One model per seed (seeds run in parallel); keeps the best mean balanced
// accuracy on `validation`, ties going to the lowest seed.
MultiSeedResult multi_seed_train(const TrainingSet& train_set, const TrainingSet& validation,
                                 const ModelConfig& model_cfg, const TrainConfig& cfg);

}  // namespace nd
