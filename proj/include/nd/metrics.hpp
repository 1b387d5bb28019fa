#pragma once

#include <array>
#include <cstdint>
#include <ostream>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "nd/gesture.hpp"

namespace nd {

struct DofCounts {
  std::uint64_t tp = 0, tn = 0, fp = 0, fn = 0;
  std::uint64_t total() const { return tp + tn + fp + fn; }
  friend bool operator==(const DofCounts&, const DofCounts&) = default;
};

struct ConfusionCounts {
  std::array<DofCounts, kDofCount> dof{};
  friend bool operator==(const ConfusionCounts&, const ConfusionCounts&) = default;
};

// Positive class = flexing. Throws DataError on length mismatch.
ConfusionCounts confusion(std::span<const GestureLabel> predictions, std::span<const GestureLabel> truth);

struct DofMetrics {
  double tpr = 0, tnr = 0, bal_acc = 0, pred_error = 0;
  bool defined = false;  // false when a class is empty for this DOF
};

DofMetrics balanced_accuracy(const DofCounts& c);
std::array<DofMetrics, kDofCount> balanced_accuracy(const ConfusionCounts& c);
// Macro average of bal_acc over the defined DOFs; 0 when none is defined.
double mean_balanced_accuracy(const std::array<DofMetrics, kDofCount>& m);
double mean_prediction_error(const std::array<DofMetrics, kDofCount>& m);

// For each truth timestamp, index of the nearest prediction timestamp (ties to
// the earlier one). Both inputs must be sorted ascending.
std::vector<std::size_t> align_nearest(std::span<const double> prediction_times, std::span<const double> truth_times);

struct GestureDistribution {
  std::vector<std::pair<GestureLabel, double>> entries;

  void validate() const;  // probabilities >= 0 summing to 1 within 1e-12
  // Rest at 0.5, the other n gestures sharing the remaining half equally.
  static GestureDistribution rest_half(std::span<const GestureLabel> others);
};

double entropy_bits(std::span<const double> probabilities);
double info_per_trial(const GestureDistribution& dist, int selections_per_trial);

struct Throughput {
  double bps = 0;
  double bpm = 0;
};

Throughput information_throughput(double success_rate, double info_per_trial_bits, double reaction_time_s);

// One line-delimited record per DOF.
void write_metrics_jsonl(std::ostream& out, const ConfusionCounts& counts, const std::array<DofMetrics, kDofCount>& m);
std::string metrics_summary_json(const ConfusionCounts& counts, const std::array<DofMetrics, kDofCount>& m);
// Human-readable per-DOF table (TPR, TNR, balanced accuracy as percentages).
void print_metrics_table(std::ostream& out, const std::array<DofMetrics, kDofCount>& m);

}  // namespace nd
