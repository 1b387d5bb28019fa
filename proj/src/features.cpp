#include "nd/features.hpp"

#include <omp.h>

#include <cmath>

#include "nd/error.hpp"

namespace nd {

namespace {

// log_of(i) returns log(|x[i]| + log_eps), either computed or precomputed.
template <typename LogOf>
FeatureVector features_impl(std::span<const double> x, const FeatureThresholds& thr, LogOf log_of) {
  const std::size_t n = x.size();
  if (n < 4) throw DataError("feature window needs at least 4 samples, got " + std::to_string(n));

  // Counts and selections are written without branches; noisy signals make
  // threshold tests unpredictable. Adding 0 leaves every sum unchanged.
  std::size_t zc = 0, ssc = 0, wa = 0, mpr = 0;
  double wl = 0, sum_abs = 0, sum_sq = 0, sum_abs3 = 0, sum_log = 0, sum_dsq = 0;
  double first_half = 0, second_half = 0, weighted = 0;
  const std::size_t half = n / 2;
  const std::size_t q1 = (n + 3) / 4, q3 = (3 * n + 3) / 4;  // 4i >= n and 4i < 3n
  bool has_nan = false;

  for (std::size_t i = 0; i < n; ++i) {
    const double v = x[i];
    has_nan |= std::isnan(v);
    const double a = std::fabs(v);
    sum_abs += a;
    sum_sq += v * v;
    sum_abs3 += a * a * a;
    sum_log += log_of(i, a);
    mpr += a >= thr.mpr;
    const bool lower = i < half;
    first_half += lower ? a : 0.0;
    second_half += lower ? 0.0 : a;
    weighted += ((i >= q1) & (i < q3) ? 1.0 : 0.5) * a;
  }
  if (has_nan) throw DataError("NaN in feature window");
  for (std::size_t i = 0; i + 1 < n; ++i) {
    const double v = x[i], next = x[i + 1];
    const double d = next - v;
    const double ad = std::fabs(d);
    wl += ad;
    sum_dsq += d * d;
    wa += ad > thr.wamp;
    zc += (v * next < 0) & (ad >= thr.zc);
  }
  for (std::size_t i = 1; i + 1 < n; ++i) ssc += (x[i] - x[i - 1]) * (x[i] - x[i + 1]) >= thr.ssc;

  const double nd = static_cast<double>(n);
  FeatureVector f{};
  at(f, Feature::ZC) = static_cast<double>(zc);
  at(f, Feature::SSC) = static_cast<double>(ssc);
  at(f, Feature::WL) = wl;
  at(f, Feature::WA) = static_cast<double>(wa);
  at(f, Feature::MAB) = sum_abs / nd;
  at(f, Feature::MSQ) = sum_sq / nd;
  at(f, Feature::RMS) = std::sqrt(sum_sq / nd);
  at(f, Feature::V3) = std::pow(sum_abs3 / nd, 1.0 / 3.0);
  at(f, Feature::LD) = std::exp(sum_log / nd);
  at(f, Feature::DABS) = std::sqrt(sum_dsq / (nd - 1.0));
  at(f, Feature::MFL) = std::log10(std::max(std::sqrt(sum_dsq), thr.log_eps));
  at(f, Feature::MPR) = static_cast<double>(mpr) / nd;
  at(f, Feature::MAVS) = second_half / static_cast<double>(n - half) - first_half / static_cast<double>(half);
  at(f, Feature::WMA) = weighted / nd;
  return f;
}

}  // namespace

FeatureVector extract_features(std::span<const double> x, const FeatureThresholds& thr) {
  return features_impl(x, thr, [&](std::size_t, double a) { return std::log(a + thr.log_eps); });
}

FeatureVector extract_features(std::span<const double> x, std::span<const double> logs, const FeatureThresholds& thr) {
  if (logs.size() != x.size()) throw DataError("log cache does not match the window");
  return features_impl(x, thr, [&](std::size_t i, double) { return logs[i]; });
}

void FeatureWindowSpec::validate() const {
  if (!(window_ms > 0) || !(step_ms > 0) || !(history_s > 0)) throw ConfigError("feature window, step and history must be positive");
  const double steps_exact = history_s * 1000.0 / step_ms;
  if (std::fabs(steps_exact - std::round(steps_exact)) > 1e-9 || std::round(steps_exact) < 1)
    throw ConfigError("history must be a whole number of steps");
}

std::size_t FeatureWindowSpec::steps() const { return static_cast<std::size_t>(std::llround(history_s * 1000.0 / step_ms)); }

std::size_t FeatureWindowSpec::window_samples(int rate_hz) const {
  return static_cast<std::size_t>(std::llround(window_ms * rate_hz / 1000.0));
}

std::size_t FeatureWindowSpec::step_samples(int rate_hz) const {
  return static_cast<std::size_t>(std::llround(step_ms * rate_hz / 1000.0));
}

std::size_t FeatureWindowSpec::ready_samples(int rate_hz) const {
  return static_cast<std::size_t>(std::llround((history_s * 1000.0 + window_ms) * rate_hz / 1000.0));
}

FeatureTensor::FeatureTensor(std::size_t ch, std::size_t t)
    : channels(ch), steps(t), values(ch * kFeatureCount * t, 0.0) {}

NormStats NormStats::identity(std::size_t rows) {
  NormStats s;
  s.mean.assign(rows, 0.0);
  s.std.assign(rows, 1.0);
  return s;
}

void normalize_in_place(std::span<double> time_major, std::size_t rows, const NormStats& stats) {
  if (stats.rows() != rows || stats.std.size() != rows) throw ConfigError("normalization stats do not match tensor rows");
  if (rows == 0 || time_major.size() % rows != 0) throw ConfigError("tensor size is not a multiple of its row count");
  for (std::size_t off = 0; off < time_major.size(); off += rows)
    for (std::size_t r = 0; r < rows; ++r) time_major[off + r] = (time_major[off + r] - stats.mean[r]) / stats.std[r];
}

FeatureTensor normalize(const FeatureTensor& tensor, const NormStats& stats) {
  FeatureTensor out = tensor;
  normalize_in_place(out.values, out.rows(), stats);
  return out;
}

NormStats fit_norm_stats(std::span<const TensorView> tensors) {
  if (tensors.empty()) throw ConfigError("normalization needs at least one training tensor");
  const std::size_t rows = tensors.front().rows;
  NormStats s;
  s.mean.assign(rows, 0.0);
  s.std.assign(rows, 0.0);
  double count = 0;
  for (const auto& t : tensors) {
    if (t.rows != rows) throw ConfigError("training tensors have different row counts");
    for (std::size_t k = 0; k < t.steps; ++k)
      for (std::size_t r = 0; r < rows; ++r) s.mean[r] += t.at(r, k);
    count += static_cast<double>(t.steps);
  }
  for (auto& m : s.mean) m /= count;
  for (const auto& t : tensors)
    for (std::size_t k = 0; k < t.steps; ++k)
      for (std::size_t r = 0; r < rows; ++r) {
        const double d = t.at(r, k) - s.mean[r];
        s.std[r] += d * d;
      }
  for (auto& v : s.std) {
    v = std::sqrt(v / count);
    if (!(v > 0)) v = 1.0;
  }
  return s;
}

NormStats fit_norm_stats(std::span<const FeatureTensor> tensors) {
  std::vector<TensorView> views;
  views.reserve(tensors.size());
  for (const auto& t : tensors) views.push_back(t.view());
  return fit_norm_stats(std::span<const TensorView>(views));
}

SampleRing::SampleRing(std::size_t channels, std::size_t capacity) : buf_(channels), capacity_(capacity) {
  if (capacity == 0) throw ConfigError("sample ring capacity must be positive");
  for (auto& b : buf_) b.reserve(2 * capacity);
}

void SampleRing::push_frame(std::span<const double> frame) {
  if (frame.size() != buf_.size()) throw DataError("sample frame has the wrong channel count");
  for (std::size_t c = 0; c < buf_.size(); ++c) buf_[c].push_back(frame[c]);
  ++total_;
  compact();
}

void SampleRing::push_block(const double* data, std::size_t n, std::size_t stride) {
  for (std::size_t c = 0; c < buf_.size(); ++c) buf_[c].insert(buf_[c].end(), data + c * stride, data + c * stride + n);
  total_ += n;
  compact();
}

void SampleRing::compact() {
  if (buf_.empty() || buf_.front().size() < 2 * capacity_) return;
  const std::size_t drop = buf_.front().size() - capacity_;
  for (auto& b : buf_) b.erase(b.begin(), b.begin() + static_cast<std::ptrdiff_t>(drop));
}

std::span<const double> SampleRing::view(std::size_t channel, std::size_t begin, std::size_t end) const {
  if (begin > end || end > total_ || begin < oldest())
    throw DataError("sample range [" + std::to_string(begin) + ", " + std::to_string(end) + ") not retained");
  const auto& b = buf_[channel];
  return {b.data() + (begin - oldest()), end - begin};
}

std::optional<FeatureTensor> build_feature_tensor(const SampleRing& ring, const FeatureWindowSpec& spec,
                                                  const FeatureThresholds& thr, int rate_hz) {
  spec.validate();
  const std::size_t now = ring.total();
  if (now < spec.ready_samples(rate_hz)) return std::nullopt;
  const std::size_t steps = spec.steps();
  const std::size_t w = spec.window_samples(rate_hz);
  const std::size_t s = spec.step_samples(rate_hz);
  const std::size_t begin = now - (steps - 1) * s - w;

  std::vector<std::span<const double>> chans;
  for (std::size_t c = 0; c < ring.channels(); ++c) chans.push_back(ring.view(c, begin, now));
  std::vector<std::size_t> ends(steps);
  for (std::size_t t = 0; t < steps; ++t) ends[t] = now - (steps - 1 - t) * s;

  FeatureTensor out(ring.channels(), steps);
  kernels::extract_columns(chans, begin, ends, w, thr, out.values);
  out.end_timestamp_s = static_cast<double>(now) / rate_hz;
  return out;
}

std::span<double> FeatureMatrix::append_column() {
  const std::size_t at = (offset_ + count_) * rows_;
  if (data_.size() < at + rows_) data_.resize(at + rows_);
  ++count_;
  return {data_.data() + at, rows_};
}

std::span<const double> FeatureMatrix::column(std::size_t k) const {
  if (k < first_ || k >= end_index()) throw DataError("feature column " + std::to_string(k) + " not held");
  return {data_.data() + (k - first_ + offset_) * rows_, rows_};
}

std::span<double> FeatureMatrix::column(std::size_t k) {
  if (k < first_ || k >= end_index()) throw DataError("feature column " + std::to_string(k) + " not held");
  return {data_.data() + (k - first_ + offset_) * rows_, rows_};
}

TensorView FeatureMatrix::window(std::size_t last, std::size_t steps) const {
  if (!has_window(last, steps)) throw DataError("feature window ending at column " + std::to_string(last) + " not held");
  const std::size_t start = last + 1 - steps;
  return {data_.data() + (start - first_ + offset_) * rows_, rows_, steps};
}

void FeatureMatrix::keep_last(std::size_t keep) {
  if (count_ <= keep) return;
  const std::size_t drop = count_ - keep;
  offset_ += drop;
  first_ += drop;
  count_ -= drop;
  if (offset_ > 4 * (count_ + 1)) {
    data_.erase(data_.begin(), data_.begin() + static_cast<std::ptrdiff_t>(offset_ * rows_));
    data_.resize(count_ * rows_);
    offset_ = 0;
  }
}

namespace kernels {

namespace {
inline void column_task(std::span<const std::span<const double>> channels, std::span<const std::span<const double>> logs,
                        std::size_t base, std::span<const std::size_t> ends, std::size_t window,
                        const FeatureThresholds& thr, std::span<double> out, std::size_t task) {
  const std::size_t nc = channels.size();
  const std::size_t j = task / nc;
  const std::size_t c = task % nc;
  const std::size_t end = ends[j];
  if (end < base + window || end - base > channels[c].size()) throw DataError("feature window outside the supplied history");
  const auto x = channels[c].subspan(end - window - base, window);
  const auto f = logs.empty() ? extract_features(x, thr) : extract_features(x, logs[c].subspan(end - window - base, window), thr);
  std::copy(f.begin(), f.end(), out.begin() + static_cast<std::ptrdiff_t>((j * nc + c) * kFeatureCount));
}

void check_args(std::span<const std::span<const double>> channels, std::span<const std::span<const double>> logs,
                std::span<const std::size_t> ends, std::span<double> out) {
  if (out.size() != ends.size() * channels.size() * kFeatureCount) throw ConfigError("feature column output has the wrong size");
  if (!logs.empty() && logs.size() != channels.size()) throw ConfigError("log cache does not cover every channel");
  for (std::size_t c = 0; c < logs.size(); ++c)
    if (logs[c].size() != channels[c].size()) throw ConfigError("log cache does not match the channel history");
}
}  // namespace

void extract_columns(std::span<const std::span<const double>> channels, std::size_t base,
                     std::span<const std::size_t> ends, std::size_t window, const FeatureThresholds& thr,
                     std::span<double> out, std::span<const std::span<const double>> logs) {
  check_args(channels, logs, ends, out);
  const auto tasks = static_cast<std::ptrdiff_t>(ends.size() * channels.size());
  // Exceptions cannot cross the parallel region; collect the first one.
  std::exception_ptr err;
#pragma omp parallel for schedule(static) if (tasks * static_cast<std::ptrdiff_t>(window) > 20000)
  for (std::ptrdiff_t t = 0; t < tasks; ++t) {
    try {
      column_task(channels, logs, base, ends, window, thr, out, static_cast<std::size_t>(t));
    } catch (...) {
#pragma omp critical
      if (!err) err = std::current_exception();
    }
  }
  if (err) std::rethrow_exception(err);
}

namespace serial {
void extract_columns(std::span<const std::span<const double>> channels, std::size_t base,
                     std::span<const std::size_t> ends, std::size_t window, const FeatureThresholds& thr,
                     std::span<double> out, std::span<const std::span<const double>> logs) {
  check_args(channels, logs, ends, out);
  const std::size_t tasks = ends.size() * channels.size();
  for (std::size_t t = 0; t < tasks; ++t) column_task(channels, logs, base, ends, window, thr, out, t);
}
}  // namespace serial

}  // namespace kernels

}  // namespace nd
