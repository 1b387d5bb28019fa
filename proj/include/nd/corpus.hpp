#pragma once

#include <cstddef>
#include <utility>
#include <vector>

#include "nd/checkpoint.hpp"
#include "nd/features.hpp"
#include "nd/frontend.hpp"
#include "nd/synthgen.hpp"
#include "nd/train.hpp"

namespace nd {

// Feature columns of a whole session with the ground truth of each column:
// labels[k] is the gesture being held when column k's window ends.
struct LabeledStream {
  FeatureMatrix columns;
  std::vector<GestureLabel> labels;
  std::size_t channels = 0;
};

// Runs the acquisition front end across a session segment by segment.
LabeledStream extract_stream(const Dataset& dataset, const FrontEndConfig& cfg);
// Same, rendering the planned segments in memory instead of reading files.
LabeledStream extract_stream(const SubjectProfile& profile, const std::vector<SegmentPlan>& plan, const FrontEndConfig& cfg);

// Splits one session in time: the last `fraction` of the columns become the
// validation part, which keeps the steps-1 columns before it as history.
std::pair<LabeledStream, LabeledStream> split_stream(const LabeledStream& s, double fraction, std::size_t steps);

// Whole-stream view (every column) for fitting normalization statistics.
TensorView full_view(const FeatureMatrix& m);
NormStats fit_norm_stats(std::span<const LabeledStream* const> streams);

struct ExampleSelection {
  std::size_t steps = 50;
  std::size_t stride = 1;  // keep every stride-th eligible column
};

// Adds a normalized copy of the stream and one example per selected column.
void add_examples(TrainingSet& set, const LabeledStream& stream, const NormStats& stats, const ExampleSelection& sel);

struct TrainingRecipe {
  ModelConfig model;
  TrainConfig train;
  ExampleSelection train_examples{50, 2};
  ExampleSelection validation_examples{50, 2};
  std::size_t fingerprint_examples = 8;

  // Compact model, lr0 1e-3, seeds {1, 2, 3}: the desk-scale benchmark setup.
  static TrainingRecipe benchmark(std::size_t input_rows);
};

struct TrainingOutcome {
  Checkpoint checkpoint;
  MultiSeedResult result;
  std::array<DofMetrics, kDofCount> validation{};
};

// Fits normalization on the training streams, trains every seed and packs the
// best model into a checkpoint. ConfigError on channel mismatch.
TrainingOutcome train_checkpoint(std::span<const LabeledStream* const> train, const LabeledStream& validation,
                                 const FrontEndConfig& frontend, const TrainingRecipe& recipe);

// Per-DOF metrics of a checkpoint on every stride-th eligible column.
std::array<DofMetrics, kDofCount> evaluate_stream(const Checkpoint& model, const LabeledStream& stream,
                                                  std::size_t stride = 1);

}  // namespace nd
