#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "nd/checkpoint.hpp"
#include "nd/frontend.hpp"
#include "nd/model.hpp"
#include "nd/synthgen.hpp"

namespace nd {

struct LatencyBudget {
  double feature_us = 1000.0;
  double decode_us = 20000.0;
};

// Engine settings file. window and thresholds are optional overrides that
// must agree with the checkpoint; when absent the checkpoint's values apply.
struct EngineConfig {
  double prediction_rate_hz = 10.0;
  std::size_t channels = 16;
  std::optional<FeatureWindowSpec> window;
  std::optional<FeatureThresholds> thresholds;
  std::string model_path;
  std::string endpoint = "127.0.0.1:7878";
  LatencyBudget latency_budget;
  double realtime_speed = 1.0;      // 1 = wall clock, 4 = four times faster
  std::size_t queue_capacity = 64;  // per inter-stage queue
  std::size_t block_samples = 100;  // raw samples per ingest block

  void validate() const;
  // Throws ConfigError when the checkpoint disagrees with this config.
  void check_model(const Checkpoint& model) const;

  static EngineConfig load(const std::filesystem::path& path);
};

void to_json(nlohmann::json& j, const EngineConfig& c);
void from_json(const nlohmann::json& j, EngineConfig& c);

struct Prediction {
  std::uint64_t tick = 0;
  std::uint64_t timestamp_us = 0;  // stream time of the tick
  std::size_t column = 0;          // newest feature column in the input
  Probabilities probabilities{};
  GestureLabel label;
  double feature_us = 0;
  double decode_us = 0;
  double end_to_end_us = 0;
};

// Turns a raw sample stream into predictions at a fixed rate. Tick k falls
// at raw sample count ceil(k * raw_rate / rate) and fires before the sample
// with that index is ingested; ticks without a full history are skipped.
class StreamDecoder {
 public:
  StreamDecoder(const Checkpoint& model, double prediction_rate_hz, std::size_t channels);

  // n samples per channel, channel c at data + c*stride. Emitted predictions
  // are appended to out.
  void push(const double* data, std::size_t n, std::size_t stride, std::vector<Prediction>& out);

  std::size_t channels() const { return frontend_.channels(); }
  std::uint64_t raw_count() const { return frontend_.raw_count(); }
  std::uint64_t ticks() const { return tick_; }
  std::uint64_t skipped() const { return skipped_; }
  const FrontEnd& frontend() const { return frontend_; }

 private:
  std::uint64_t tick_sample(std::uint64_t k) const;
  void fire(std::vector<Prediction>& out);

  const Checkpoint* model_;
  double rate_hz_;
  FrontEnd frontend_;
  SlidingForward net_;
  std::uint64_t tick_ = 0;  // next tick index
  std::uint64_t skipped_ = 0;
  double pending_feature_us_ = 0;
  std::vector<double> input_;
};

// Pull-style multichannel sample source.
class SampleSource {
 public:
  virtual ~SampleSource() = default;
  virtual std::size_t channels() const = 0;
  virtual int sample_rate_hz() const = 0;
  // Up to max_n samples per channel into out (channel c at out + c*stride);
  // returns the count, 0 at end of stream.
  virtual std::size_t read(double* out, std::size_t max_n, std::size_t stride) = 0;
};

// Plays recordings back to back.
class RecordingSource : public SampleSource {
 public:
  explicit RecordingSource(std::vector<Recording> recordings);
  std::size_t channels() const override;
  int sample_rate_hz() const override;
  std::size_t read(double* out, std::size_t max_n, std::size_t stride) override;

 private:
  std::vector<Recording> recs_;
  std::size_t index_ = 0;
  std::size_t pos_ = 0;
};

// Streams a dataset's segments in order, loading one at a time.
class DatasetSource : public SampleSource {
 public:
  explicit DatasetSource(Dataset dataset);
  std::size_t channels() const override;
  int sample_rate_hz() const override;
  std::size_t read(double* out, std::size_t max_n, std::size_t stride) override;

 private:
  Dataset data_;
  std::size_t index_ = 0;
  std::size_t pos_ = 0;
  std::optional<Recording> current_;
};

struct LatencyStats {
  double p50 = 0, p95 = 0, max = 0;
};

// Nearest-rank percentile, q in [0, 100]; 0 for an empty sample.
double percentile(std::vector<double> values, double q);
LatencyStats latency_stats(const std::vector<double>& values);

// Allowance for queue hand-offs and timer jitter when comparing stage
// latencies with the end-to-end figure.
inline constexpr double kSchedulingOverheadUs = 1000.0;

struct LatencyReport {
  std::vector<double> feature_us, decode_us, end_to_end_us;
  std::uint64_t skipped_ticks = 0;
  std::uint64_t dropped_predictions = 0;
  std::uint64_t gaps = 0;

  std::size_t frames() const { return feature_us.size(); }
  void add(const Prediction& p);
  LatencyStats feature() const { return latency_stats(feature_us); }
  LatencyStats decode() const { return latency_stats(decode_us); }
  LatencyStats end_to_end() const { return latency_stats(end_to_end_us); }
  // Sum of stage medians within end-to-end median plus the overhead bound.
  bool consistent() const;
  bool within(const LatencyBudget& b) const;
  nlohmann::json to_json() const;
};

enum class RunMode { Batch, RealTime };

struct PipelineResult {
  std::vector<Prediction> predictions;
  LatencyReport latency;
};

using PredictionSink = std::function<void(const Prediction&)>;

// Batch mode replays as fast as possible on the calling thread. Real-time
// mode runs ingest, decode and emit workers paced at realtime_speed times
// the sample clock; samples are never dropped, predictions are dropped
// oldest-first when the emit queue is full. The sink, if any, runs on the
// emit worker.
PipelineResult run_pipeline(SampleSource& source, const Checkpoint& model, const EngineConfig& cfg, RunMode mode,
                            const PredictionSink& sink = {});

}  // namespace nd
