#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <ostream>
#include <span>
#include <vector>

#include <json.hpp>

#include "nd/checkpoint.hpp"
#include "nd/corpus.hpp"
#include "nd/gesture.hpp"
#include "nd/metrics.hpp"
#include "nd/synthgen.hpp"

namespace nd {

struct MatchingTaskConfig {
  // Rest plus the gestures that can be shown; rest itself is never shown.
  std::vector<GestureLabel> targets = default_targets();
  double cutoff_s = 3.0;
  double prediction_rate_hz = 10.0;
  std::size_t trials = 200;
  double pre_roll_s = 1.5;  // rest before the target appears, fills the decoder history

  void validate() const;
  std::vector<GestureLabel> shown_targets() const;

  // rest, five single fingers, fist, index pinch, wrist pronation
  static std::vector<GestureLabel> default_targets();
};

void to_json(nlohmann::json& j, const MatchingTaskConfig& c);
void from_json(const nlohmann::json& j, MatchingTaskConfig& c);

struct SimulatedSubject {
  SubjectProfile profile = SubjectProfile::benchmark16();
  double onset_median_s = 0.55;  // lognormal movement onset after the target appears
  double onset_sigma_log = 0.25;
  double retry_s = 0.6;     // switches to the right gesture this long after a wrong start
  double error_rate = 0.05; // chance of starting with a wrong gesture

  void validate() const;
};

void to_json(nlohmann::json& j, const SimulatedSubject& s);
void from_json(const nlohmann::json& j, SimulatedSubject& s);

// Everything random about one trial, drawn before it runs.
struct TrialPlan {
  std::size_t trial_id = 0;
  GestureLabel target;
  double onset_s = 0;
  std::optional<GestureLabel> wrong_start;
  std::uint64_t synth_seed = 0;
};

std::vector<TrialPlan> plan_trials(const SimulatedSubject& subject, const MatchingTaskConfig& cfg, std::uint64_t seed);

struct TraceFrame {
  double t_s = 0;  // since the target appeared
  Probabilities probabilities{};
  GestureLabel label;
};

struct TrialResult {
  std::size_t trial_id = 0;
  GestureLabel target;
  bool success = false;
  double reaction_time_s = 0;  // NaN on failure
  // Start of the run of frames, ending at the success frame (or the last frame
  // on failure), in which the DOF already matched; NaN when it never did.
  std::array<double, kDofCount> per_dof_match_time_s{};
  double onset_s = 0;
  bool wrong_start = false;
  double feature_us = 0;  // mean machine latency per frame (wall clock)
  double decode_us = 0;
  std::vector<TraceFrame> trace;
};

// Everything except the wall-clock latencies.
bool same_outcome(const TrialResult& a, const TrialResult& b);

// Each trial: the subject rests for the pre-roll, the target appears, and the
// subject's nerve stream is decoded at the prediction rate until the label
// matches the target in all six DOF or the cutoff passes. The generator runs
// on its own thread feeding a bounded queue. ConfigError when the model and
// subject disagree in channels.
std::vector<TrialResult> run_matching_session(const Checkpoint& model, const SimulatedSubject& subject,
                                              const MatchingTaskConfig& cfg, std::uint64_t seed);

struct GestureReaction {
  GestureLabel gesture;
  std::size_t trials = 0, successes = 0;
  double success_rate = 0;
  double median_rt_s = 0;
  bool median_defined = false;
};

struct ReactionStats {
  std::size_t trials = 0, successes = 0;
  double success_rate = 0;
  double median_rt_s = 0;  // over successful trials
  bool median_defined = false;
  std::vector<GestureReaction> per_gesture;  // ascending by gesture mask
};

double median(std::vector<double> values);
ReactionStats reaction_stats(std::span<const TrialResult> results);

struct MatchingReport {
  ReactionStats stats;
  double info_bits = 0;  // per trial: rest half + shown targets, two selections
  Throughput throughput; // from the pooled success rate and median
  Throughput per_gesture_throughput;  // mean over gestures with a defined median
  nlohmann::json to_json() const;
};

MatchingReport matching_report(std::span<const TrialResult> results, const MatchingTaskConfig& cfg);
// Table of success rate, median reaction time and throughput per gesture.
void print_matching_table(std::ostream& out, const MatchingReport& r);

// One JSON object per line: trial_id, target, success, rt_s, per_dof_ms,
// latencies (human onset and the remaining decode delay). Wall-clock figures
// are left out so equal seeds give equal logs.
void write_trial_log(std::ostream& out, std::span<const TrialResult> results);

struct DensityCurve {
  std::vector<double> x, y;
  double bandwidth = 0;

  // Trapezoid rule over the grid.
  double integral() const;
  // Grid points that are local maxima above min_fraction of the global peak.
  std::vector<double> peaks(double min_fraction = 0.05) const;
};

// 0.9 * min(sd, IQR / 1.34) * n^(-1/5); DataError for fewer than 2 samples
// or a zero spread.
double silverman_bandwidth(std::span<const double> samples);
// Gaussian kernel estimate on `points` evenly spaced values over [lo, hi].
DensityCurve kde_density(std::span<const double> samples, double lo, double hi, std::size_t points = 512,
                         std::optional<double> bandwidth = std::nullopt);
// Two whitespace-separated columns, x and density.
void write_density(std::ostream& out, const DensityCurve& curve);

// Per-DOF metrics of a model trained on train_session, scored on
// eval_session. ConfigError when the sessions or model disagree in schema.
std::array<DofMetrics, kDofCount> cross_session_eval(const Checkpoint& model, const LabeledStream& train_session,
                                                     const LabeledStream& eval_session, std::size_t stride = 1);

struct RetrainResult {
  Checkpoint model;
  std::array<DofMetrics, kDofCount> metrics{};
};

// Retrains from scratch on the drifted session and scores eval_session.
RetrainResult retrain_and_eval(const LabeledStream& drifted_session, const LabeledStream& validation,
                               const LabeledStream& eval_session, const FrontEndConfig& frontend,
                               const TrainingRecipe& recipe, std::size_t stride = 1);

}  // namespace nd
