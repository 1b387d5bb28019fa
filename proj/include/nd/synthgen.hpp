#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "nd/gesture.hpp"
#include "nd/sigproc.hpp"

namespace nd {

inline constexpr int kSynthRateHz = 10000;
inline constexpr double kLabelRateHz = 50.0;

struct BurstSpec {
  double rate_hz = 60.0;    // Poisson arrival rate per flexed DOF
  double amplitude = 1.0;   // peak of a unit-gain pulse
  double width_ms = 4.0;    // both lobes together
};

struct SubjectProfile {
  std::size_t channels = 16;
  std::array<std::vector<double>, kDofCount> gains;  // gains[dof][channel]
  BurstSpec burst;
  double noise_floor = 2.0;  // std of the background noise
  double snr_target = 2.0;   // ratio of flex to rest dB power on a unit-gain channel
  bool wrist_distinct = true;

  void validate() const;
  // Sets burst.amplitude so a unit-gain channel reaches snr_target.
  void calibrate();
  std::size_t pulse_samples() const;
  // Expected per-sample power of the bursts of one DOF on a unit-gain channel.
  double burst_power() const;
  std::string hash() const;

  // Fingers on channel pairs with crosstalk, wrist on channels 12-15.
  static SubjectProfile benchmark16();
  // Eight ulnar channels: ring and little strong, thumb/index/middle weak, no wrist.
  static SubjectProfile ulnar8();
};

void to_json(nlohmann::json& j, const SubjectProfile& p);
void from_json(const nlohmann::json& j, SubjectProfile& p);

struct DriftSpec {
  double gain_drift_per_day = 0.0;        // fraction of each gain moved toward the next channel per day
  double baseline_shift_per_day = 0.0;    // noise floor change per day
  double burst_rate_drift_per_day = 0.0;  // Hz per day
};

void to_json(nlohmann::json& j, const DriftSpec& d);
void from_json(const nlohmann::json& j, DriftSpec& d);

// Linear drift after `days`; days == 0 returns the profile unchanged.
SubjectProfile apply_drift(const SubjectProfile& profile, const DriftSpec& drift, int days);

struct SessionSpec {
  std::vector<GestureLabel> gestures;
  std::size_t repetitions = 10;
  double hold_s = 2.0;
  double rest_s = 2.0;
  std::string session_id = "session";
  int day_index = 0;

  void validate() const;
  // thumb, index, middle, ring, little, fist, wrist pronation
  static std::vector<GestureLabel> benchmark_gestures();
};

void to_json(nlohmann::json& j, const SessionSpec& s);
void from_json(const nlohmann::json& j, SessionSpec& s);

// Streaming signal source. Output depends only on the seed and the sequence
// of (gesture, sample) requests, not on how they are split into calls.
class SignalSynth {
 public:
  SignalSynth(const SubjectProfile& profile, std::uint64_t seed);

  // Writes n samples per channel of the given gesture, channel c at
  // out + c*stride. Values are rounded to float precision.
  void render(GestureLabel gesture, std::size_t n, double* out, std::size_t stride);
  Recording render(GestureLabel gesture, std::size_t n);
  std::size_t position() const { return pos_; }

 private:
  SubjectProfile profile_;
  std::vector<double> pulse_;
  std::mt19937_64 noise_rng_;
  std::array<std::mt19937_64, kDofCount> event_rng_;
  std::normal_distribution<double> normal_;
  std::array<bool, kDofCount> armed_{};
  std::array<double, kDofCount> next_event_{};
  std::vector<double> tail_;  // pending pulse energy past the last rendered sample [c][w]
  std::vector<double> acc_;
  std::size_t pos_ = 0;
};

struct LabelRow {
  std::int64_t timestamp_ms = 0;
  GestureLabel gesture;
  friend bool operator==(const LabelRow&, const LabelRow&) = default;
};

struct SegmentPlan {
  std::size_t index = 0;
  GestureLabel gesture;
  std::uint64_t seed = 0;
  std::size_t start_sample = 0;
  std::size_t length = 0;
};

struct LabeledSegment {
  Recording recording;
  std::vector<LabelRow> labels;
};

// Label rows at 50 Hz covering [start, start + length) samples of the session clock.
std::vector<LabelRow> segment_labels(const SegmentPlan& seg);

LabeledSegment generate_segment(const SegmentPlan& seg, const SubjectProfile& profile);

// Rest, then each gesture in turn with a rest before it, cycling for the
// repetitions, then a closing rest.
std::vector<SegmentPlan> plan_session(const SessionSpec& spec, std::uint64_t seed);

struct DatasetManifest {
  int schema_version = 1;
  SubjectProfile profile;
  SessionSpec spec;
  std::uint64_t seed = 0;
  int sample_rate_hz = kSynthRateHz;
  std::vector<SegmentPlan> segments;

  std::size_t total_samples() const;
  std::size_t active_segments() const;
};

void to_json(nlohmann::json& j, const DatasetManifest& m);
void from_json(const nlohmann::json& j, DatasetManifest& m);

// Writes manifest.json, seg_NNNN.nrd and seg_NNNN.labels.csv. Refuses a
// non-empty directory unless force is set.
DatasetManifest generate_session(const SubjectProfile& profile, const SessionSpec& spec, std::uint64_t seed,
                                 const std::filesystem::path& dir, bool force = false);

// Read side of the dataset layout.
class Dataset {
 public:
  static Dataset open(const std::filesystem::path& dir);

  const DatasetManifest& manifest() const { return manifest_; }
  const std::filesystem::path& dir() const { return dir_; }
  std::size_t size() const { return manifest_.segments.size(); }
  Recording recording(std::size_t i) const;
  std::vector<LabelRow> labels(std::size_t i) const;

 private:
  std::filesystem::path dir_;
  DatasetManifest manifest_;
};

std::string write_labels_csv(const std::vector<LabelRow>& rows);
std::vector<LabelRow> parse_labels_csv(const std::string& text);

}  // namespace nd
