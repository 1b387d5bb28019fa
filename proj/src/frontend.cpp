#include "nd/frontend.hpp"

#include <algorithm>
#include <cmath>

#include "nd/error.hpp"

namespace nd {

namespace {
// Columns extracted per flush; bounds the ring growth during large pushes.
constexpr std::size_t kColumnBatch = 16;
}  // namespace

void FrontEndConfig::validate() const {
  if (raw_rate_hz <= 0 || decimation <= 0 || raw_rate_hz % decimation != 0)
    throw ConfigError("decimation factor must divide the raw sample rate");
  band.validate(raw_rate_hz);
  if (!(band.high_hz < feature_rate_hz() / 2.0)) throw ConfigError("band upper edge must be below the decimated Nyquist rate");
  window.validate();
  if (window.window_samples(feature_rate_hz()) < 4) throw ConfigError("feature window shorter than 4 samples");
  if (window.step_samples(feature_rate_hz()) == 0) throw ConfigError("feature step shorter than one sample");
}

FrontEnd::FrontEnd(std::size_t channels, FrontEndConfig cfg, std::size_t keep_columns)
    : channels_(channels),
      cfg_(std::move(cfg)),
      ring_(channels, [&] {
        cfg_.validate();
        const int rate = cfg_.feature_rate_hz();
        return std::max(cfg_.window.ready_samples(rate),
                        cfg_.window.window_samples(rate) + (kColumnBatch + 1) * cfg_.window.step_samples(rate));
      }()),
      log_ring_(channels, ring_.capacity()),
      columns_(channels * kFeatureCount),
      keep_columns_(keep_columns) {
  if (channels == 0) throw ConfigError("front end needs at least one channel");
  const auto sos = design_bandpass(cfg_.band, cfg_.raw_rate_hz);
  filters_.assign(channels, SosFilter(sos));
  window_ = cfg_.window.window_samples(cfg_.feature_rate_hz());
  step_ = cfg_.window.step_samples(cfg_.feature_rate_hz());
  next_column_ = (window_ + step_ - 1) / step_;
  columns_.set_first_index(next_column_);
}

void FrontEnd::push(const Recording& rec) {
  if (rec.channel_count() != channels_) throw ConfigError("recording channel count does not match the front end");
  if (rec.sample_rate_hz != cfg_.raw_rate_hz) throw ConfigError("recording sample rate does not match the front end");
  const std::size_t n = rec.length();
  std::vector<double> block(channels_ * n);
  for (std::size_t c = 0; c < channels_; ++c) std::copy(rec.samples[c].begin(), rec.samples[c].end(), block.begin() + static_cast<std::ptrdiff_t>(c * n));
  push(block.data(), n, n);
}

void FrontEnd::push(const double* data, std::size_t n, std::size_t stride) {
  const auto decim = static_cast<std::size_t>(cfg_.decimation);
  const std::size_t chunk = kColumnBatch * step_ * decim;
  std::size_t pos = 0;
  while (pos < n) {
    const std::size_t len = std::min(chunk, n - pos);
    // Decimated samples produced by raw indices [raw_count_, raw_count_ + len).
    const std::size_t first_kept = (decim - raw_count_ % decim) % decim;
    const std::size_t kept = first_kept < len ? (len - first_kept + decim - 1) / decim : 0;
    scratch_.resize(channels_ * std::max<std::size_t>(kept, 1));
    for (std::size_t c = 0; c < channels_; ++c) {
      const double* src = data + c * stride + pos;
      SosFilter& f = filters_[c];
      double* dst = scratch_.data() + c * kept;
      std::size_t out = 0;
      for (std::size_t i = 0; i < len; ++i) {
        const double y = f.step(src[i]);
        if ((raw_count_ + i) % decim == 0) dst[out++] = y;
      }
    }
    ring_.push_block(scratch_.data(), kept, kept);
    log_scratch_.resize(scratch_.size());
    const double eps = cfg_.thresholds.log_eps;
    for (std::size_t i = 0; i < channels_ * kept; ++i) log_scratch_[i] = std::log(std::fabs(scratch_[i]) + eps);
    log_ring_.push_block(log_scratch_.data(), kept, kept);
    raw_count_ += len;
    pos += len;
    flush_columns();
  }
}

void FrontEnd::flush_columns() {
  const std::size_t total = ring_.total();
  if (next_column_ * step_ > total) return;
  const std::size_t last = total / step_;
  std::vector<std::size_t> ends;
  for (std::size_t k = next_column_; k <= last; ++k) ends.push_back(k * step_);
  const std::size_t begin = ends.front() - window_;
  std::vector<std::span<const double>> chans, logs;
  chans.reserve(channels_);
  logs.reserve(channels_);
  for (std::size_t c = 0; c < channels_; ++c) {
    chans.push_back(ring_.view(c, begin, ends.back()));
    logs.push_back(log_ring_.view(c, begin, ends.back()));
  }

  std::vector<double> out(ends.size() * channels_ * kFeatureCount);
  if (parallel_)
    kernels::extract_columns(chans, begin, ends, window_, cfg_.thresholds, out, logs);
  else
    kernels::serial::extract_columns(chans, begin, ends, window_, cfg_.thresholds, out, logs);

  const std::size_t rows = channels_ * kFeatureCount;
  for (std::size_t j = 0; j < ends.size(); ++j) {
    auto col = columns_.append_column();
    std::copy_n(out.begin() + static_cast<std::ptrdiff_t>(j * rows), rows, col.begin());
  }
  next_column_ = last + 1;
  if (keep_columns_ > 0) columns_.keep_last(keep_columns_);
}

std::optional<std::size_t> FrontEnd::latest_column() const {
  if (columns_.empty()) return std::nullopt;
  return columns_.end_index() - 1;
}

std::optional<TensorView> FrontEnd::latest_window() const {
  if (!ready()) return std::nullopt;
  const auto k = latest_column();
  const std::size_t steps = cfg_.window.steps();
  if (!k || !columns_.has_window(*k, steps)) return std::nullopt;
  return columns_.window(*k, steps);
}

double FrontEnd::column_time_s(std::size_t k) const {
  return static_cast<double>(k * step_) / cfg_.feature_rate_hz();
}

}  // namespace nd
