#include "nd/engine.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <thread>

#include "nd/error.hpp"
#include "nd/jsonio.hpp"
#include "nd/queue.hpp"

namespace nd {

namespace {

using Clock = std::chrono::steady_clock;

double micros(Clock::time_point a, Clock::time_point b) {
  return std::chrono::duration<double, std::micro>(b - a).count();
}

bool same_window(const FeatureWindowSpec& a, const FeatureWindowSpec& b) {
  return a.window_ms == b.window_ms && a.step_ms == b.step_ms && a.history_s == b.history_s;
}

bool same_thresholds(const FeatureThresholds& a, const FeatureThresholds& b) {
  return a.zc == b.zc && a.ssc == b.ssc && a.wamp == b.wamp && a.mpr == b.mpr && a.log_eps == b.log_eps;
}

}  // namespace

void EngineConfig::validate() const {
  if (!(prediction_rate_hz >= 5.0 && prediction_rate_hz <= 50.0))
    throw ConfigError("prediction rate must lie in [5, 50] Hz, got " + std::to_string(prediction_rate_hz));
  if (channels == 0) throw ConfigError("engine needs at least one channel");
  if (window) window->validate();
  if (!(latency_budget.feature_us > 0 && latency_budget.decode_us > 0)) throw ConfigError("latency budget must be positive");
  if (!(realtime_speed > 0)) throw ConfigError("realtime_speed must be positive");
  if (queue_capacity == 0) throw ConfigError("queue_capacity must be at least 1");
  if (block_samples == 0) throw ConfigError("block_samples must be at least 1");
}

void EngineConfig::check_model(const Checkpoint& model) const {
  const auto& mc = model.params.config;
  if (mc.input_rows != channels * kFeatureCount)
    throw ConfigError("model expects " + std::to_string(mc.input_rows / kFeatureCount) + " channels, engine configured for " +
                      std::to_string(channels));
  if (mc.steps != model.frontend.window.steps()) throw ConfigError("model steps do not match the checkpoint window");
  if (model.norm.rows() != mc.input_rows) throw ConfigError("normalization statistics do not match the model");
  if (window && !same_window(*window, model.frontend.window))
    throw ConfigError("engine window settings differ from the checkpoint");
  if (thresholds && !same_thresholds(*thresholds, model.frontend.thresholds))
    throw ConfigError("engine feature thresholds differ from the checkpoint");
}

EngineConfig EngineConfig::load(const std::filesystem::path& path) {
  const auto j = read_json_file(path);
  try {
    auto cfg = j.get<EngineConfig>();
    cfg.validate();
    return cfg;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

void to_json(nlohmann::json& j, const EngineConfig& c) {
  j = {{"rate", c.prediction_rate_hz},
       {"channels", c.channels},
       {"model", c.model_path},
       {"endpoint", c.endpoint},
       {"latency_budget", {{"feature_us", c.latency_budget.feature_us}, {"decode_us", c.latency_budget.decode_us}}},
       {"realtime_speed", c.realtime_speed},
       {"queue_capacity", c.queue_capacity},
       {"block_samples", c.block_samples}};
  if (c.window) j["window"] = *c.window;
  if (c.thresholds) j["thresholds"] = *c.thresholds;
}

void from_json(const nlohmann::json& j, EngineConfig& c) {
  require_keys(j,
               {"rate", "channels", "window", "thresholds", "model", "endpoint", "latency_budget", "realtime_speed",
                "queue_capacity", "block_samples"},
               "engine");
  read_key(j, "rate", c.prediction_rate_hz);
  read_key(j, "channels", c.channels);
  if (j.contains("window")) c.window = j["window"].get<FeatureWindowSpec>();
  if (j.contains("thresholds")) c.thresholds = j["thresholds"].get<FeatureThresholds>();
  read_key(j, "model", c.model_path);
  read_key(j, "endpoint", c.endpoint);
  if (auto it = j.find("latency_budget"); it != j.end()) {
    require_keys(*it, {"feature_us", "decode_us"}, "latency_budget");
    read_key(*it, "feature_us", c.latency_budget.feature_us);
    read_key(*it, "decode_us", c.latency_budget.decode_us);
  }
  read_key(j, "realtime_speed", c.realtime_speed);
  read_key(j, "queue_capacity", c.queue_capacity);
  read_key(j, "block_samples", c.block_samples);
}

StreamDecoder::StreamDecoder(const Checkpoint& model, double prediction_rate_hz, std::size_t channels)
    : model_(&model),
      rate_hz_(prediction_rate_hz),
      frontend_(channels, model.frontend, model.frontend.window.steps()),
      net_(model.params) {
  if (!(prediction_rate_hz >= 5.0 && prediction_rate_hz <= 50.0)) throw ConfigError("prediction rate must lie in [5, 50] Hz");
  if (model.params.config.input_rows != channels * kFeatureCount) throw ConfigError("model does not match the channel count");
  input_.resize(model.params.config.input_rows * model.params.config.steps);
}

std::uint64_t StreamDecoder::tick_sample(std::uint64_t k) const {
  const double at = static_cast<double>(k) * model_->frontend.raw_rate_hz / rate_hz_;
  return static_cast<std::uint64_t>(std::ceil(at - 1e-9));
}

void StreamDecoder::push(const double* data, std::size_t n, std::size_t stride, std::vector<Prediction>& out) {
  std::size_t pos = 0;
  while (pos < n) {
    while (tick_sample(tick_) == frontend_.raw_count()) fire(out);
    const std::size_t len = std::min<std::uint64_t>(n - pos, tick_sample(tick_) - frontend_.raw_count());
    const auto t0 = Clock::now();
    frontend_.push(data + pos, len, stride);
    pending_feature_us_ += micros(t0, Clock::now());
    pos += len;
  }
}

void StreamDecoder::fire(std::vector<Prediction>& out) {
  const std::uint64_t k = tick_++;
  const auto window = frontend_.latest_window();
  if (!window) {
    ++skipped_;
    pending_feature_us_ = 0;
    return;
  }
  const auto t0 = Clock::now();
  std::copy_n(window->data, input_.size(), input_.begin());
  normalize_in_place(input_, window->rows, model_->norm);
  const auto t1 = Clock::now();

  Prediction p;
  p.tick = k;
  p.timestamp_us = tick_sample(k) * 1000000ULL / static_cast<std::uint64_t>(model_->frontend.raw_rate_hz);
  p.column = *frontend_.latest_column();
  p.probabilities = net_(TensorView{input_.data(), window->rows, window->steps}, p.column);
  p.label = threshold(p.probabilities);
  const auto t2 = Clock::now();
  p.feature_us = pending_feature_us_ + micros(t0, t1);
  p.decode_us = micros(t1, t2);
  p.end_to_end_us = p.feature_us + p.decode_us;
  pending_feature_us_ = 0;
  out.push_back(p);
}

RecordingSource::RecordingSource(std::vector<Recording> recordings) : recs_(std::move(recordings)) {
  if (recs_.empty()) throw ConfigError("no recordings to play");
  for (const auto& r : recs_)
    if (r.channel_count() != recs_.front().channel_count() || r.sample_rate_hz != recs_.front().sample_rate_hz)
      throw DataError("recordings differ in channel count or sample rate");
}

std::size_t RecordingSource::channels() const { return recs_.front().channel_count(); }
int RecordingSource::sample_rate_hz() const { return recs_.front().sample_rate_hz; }

std::size_t RecordingSource::read(double* out, std::size_t max_n, std::size_t stride) {
  std::size_t done = 0;
  while (done < max_n && index_ < recs_.size()) {
    const auto& r = recs_[index_];
    const std::size_t len = std::min(max_n - done, r.length() - pos_);
    for (std::size_t c = 0; c < r.channel_count(); ++c)
      std::copy_n(r.samples[c].begin() + static_cast<std::ptrdiff_t>(pos_), len, out + c * stride + done);
    done += len;
    pos_ += len;
    if (pos_ == r.length()) {
      ++index_;
      pos_ = 0;
    }
  }
  return done;
}

DatasetSource::DatasetSource(Dataset dataset) : data_(std::move(dataset)) {
  if (data_.size() == 0) throw DataError("dataset has no segments");
}

std::size_t DatasetSource::channels() const { return data_.manifest().profile.channels; }
int DatasetSource::sample_rate_hz() const { return data_.manifest().sample_rate_hz; }

std::size_t DatasetSource::read(double* out, std::size_t max_n, std::size_t stride) {
  std::size_t done = 0;
  while (done < max_n && index_ < data_.size()) {
    if (!current_) current_ = data_.recording(index_);
    const auto& r = *current_;
    const std::size_t len = std::min(max_n - done, r.length() - pos_);
    for (std::size_t c = 0; c < r.channel_count(); ++c)
      std::copy_n(r.samples[c].begin() + static_cast<std::ptrdiff_t>(pos_), len, out + c * stride + done);
    done += len;
    pos_ += len;
    if (pos_ == r.length()) {
      ++index_;
      pos_ = 0;
      current_.reset();
    }
  }
  return done;
}

double percentile(std::vector<double> values, double q) {
  if (values.empty()) return 0.0;
  std::sort(values.begin(), values.end());
  const auto rank = static_cast<std::size_t>(std::ceil(q / 100.0 * static_cast<double>(values.size())));
  return values[std::clamp<std::size_t>(rank, 1, values.size()) - 1];
}

LatencyStats latency_stats(const std::vector<double>& values) {
  LatencyStats s;
  s.p50 = percentile(values, 50);
  s.p95 = percentile(values, 95);
  s.max = values.empty() ? 0.0 : *std::max_element(values.begin(), values.end());
  return s;
}

void LatencyReport::add(const Prediction& p) {
  feature_us.push_back(p.feature_us);
  decode_us.push_back(p.decode_us);
  end_to_end_us.push_back(p.end_to_end_us);
}

bool LatencyReport::consistent() const {
  return feature().p50 + decode().p50 <= end_to_end().p50 + kSchedulingOverheadUs;
}

bool LatencyReport::within(const LatencyBudget& b) const {
  return feature().p95 < b.feature_us && decode().p95 < b.decode_us;
}

nlohmann::json LatencyReport::to_json() const {
  auto stats = [](const LatencyStats& s) { return nlohmann::json{{"p50", s.p50}, {"p95", s.p95}, {"max", s.max}}; };
  return {{"frames", frames()},
          {"skipped_ticks", skipped_ticks},
          {"dropped_predictions", dropped_predictions},
          {"gaps", gaps},
          {"feature_us", stats(feature())},
          {"decode_us", stats(decode())},
          {"end_to_end_us", stats(end_to_end())}};
}

namespace {

void check_source(const SampleSource& source, const Checkpoint& model, const EngineConfig& cfg) {
  cfg.validate();
  cfg.check_model(model);
  if (source.channels() != cfg.channels)
    throw ConfigError("source has " + std::to_string(source.channels()) + " channels, engine configured for " +
                      std::to_string(cfg.channels));
  if (source.sample_rate_hz() != model.frontend.raw_rate_hz) throw ConfigError("source sample rate does not match the model");
}

PipelineResult run_batch(SampleSource& source, const Checkpoint& model, const EngineConfig& cfg, const PredictionSink& sink) {
  StreamDecoder dec(model, cfg.prediction_rate_hz, cfg.channels);
  constexpr std::size_t kChunk = 10000;
  std::vector<double> buf(cfg.channels * kChunk);
  PipelineResult res;
  std::vector<Prediction> fresh;
  while (const std::size_t n = source.read(buf.data(), kChunk, kChunk)) {
    fresh.clear();
    dec.push(buf.data(), n, kChunk, fresh);
    for (auto& p : fresh) {
      if (sink) sink(p);
      res.latency.add(p);
      res.predictions.push_back(p);
    }
  }
  res.latency.skipped_ticks = dec.skipped();
  return res;
}

struct Block {
  std::vector<double> data;
  std::size_t n = 0;
  Clock::time_point arrival;
};

// End-to-end latency of a real-time frame is the trigger block's wait in the
// sample queue, the frame's own feature and decode work, and the prediction's
// wait in the emit queue.
struct Timed {
  Prediction p;
  double queued_us = 0;
  Clock::time_point ready;
};

PipelineResult run_realtime(SampleSource& source, const Checkpoint& model, const EngineConfig& cfg,
                            const PredictionSink& sink) {
  BoundedQueue<Block> samples(cfg.queue_capacity);
  BoundedQueue<Timed> predictions(cfg.queue_capacity);
  const std::size_t bs = cfg.block_samples;
  const double sample_period_s = 1.0 / (source.sample_rate_hz() * cfg.realtime_speed);
  std::uint64_t gaps = 0, dropped = 0, skipped = 0;

  std::thread ingest([&] {
    const auto start = Clock::now();
    std::uint64_t produced = 0;
    for (;;) {
      Block b;
      b.data.resize(cfg.channels * bs);
      b.n = source.read(b.data.data(), bs, bs);
      if (b.n == 0) break;
      produced += b.n;
      const auto due = start + std::chrono::duration_cast<Clock::duration>(
                                   std::chrono::duration<double>(static_cast<double>(produced) * sample_period_s));
      std::this_thread::sleep_until(due);
      b.arrival = Clock::now();
      if (b.arrival - due > std::chrono::duration<double>(static_cast<double>(bs) * sample_period_s)) ++gaps;
      if (!samples.push(std::move(b))) break;
    }
    samples.close();
  });

  std::thread decode([&] {
    StreamDecoder dec(model, cfg.prediction_rate_hz, cfg.channels);
    std::vector<Prediction> fresh;
    while (auto b = samples.pop()) {
      const double queued = micros(b->arrival, Clock::now());
      fresh.clear();
      dec.push(b->data.data(), b->n, bs, fresh);
      for (const auto& p : fresh)
        if (predictions.push_drop_oldest(Timed{p, queued, Clock::now()})) ++dropped;
    }
    skipped = dec.skipped();
    predictions.close();
  });

  PipelineResult res;
  while (auto t = predictions.pop()) {
    t->p.end_to_end_us = t->queued_us + t->p.feature_us + t->p.decode_us + micros(t->ready, Clock::now());
    if (sink) sink(t->p);
    res.latency.add(t->p);
    res.predictions.push_back(t->p);
  }
  ingest.join();
  decode.join();
  res.latency.skipped_ticks = skipped;
  res.latency.dropped_predictions = dropped;
  res.latency.gaps = gaps;
  return res;
}

}  // namespace

PipelineResult run_pipeline(SampleSource& source, const Checkpoint& model, const EngineConfig& cfg, RunMode mode,
                            const PredictionSink& sink) {
  check_source(source, model, cfg);
  return mode == RunMode::Batch ? run_batch(source, model, cfg, sink) : run_realtime(source, model, cfg, sink);
}

}  // namespace nd
