#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include "nd/features.hpp"
#include "nd/sigproc.hpp"

namespace nd {

struct FrontEndConfig {
  int raw_rate_hz = 10000;
  int decimation = 2;
  BandSpec band;
  FeatureWindowSpec window;
  FeatureThresholds thresholds;

  int feature_rate_hz() const { return raw_rate_hz / decimation; }
  void validate() const;
};

// Streaming acquisition chain: band-pass at the raw rate, decimation, sample
// history, and feature columns on the fixed step grid. Results do not depend
// on how the input is split into blocks.
class FrontEnd {
 public:
  // keep_columns == 0 retains every column (offline dataset building).
  FrontEnd(std::size_t channels, FrontEndConfig cfg, std::size_t keep_columns = 0);

  // n raw samples per channel, channel-major: channel c starts at data + c*stride.
  void push(const double* data, std::size_t n, std::size_t stride);
  void push(const Recording& rec);

  std::size_t channels() const { return channels_; }
  const FrontEndConfig& config() const { return cfg_; }
  std::size_t raw_count() const { return raw_count_; }
  std::size_t sample_count() const { return ring_.total(); }
  const SampleRing& ring() const { return ring_; }
  const FeatureMatrix& columns() const { return columns_; }

  // Enough decimated history for a full tensor (history + one window).
  bool ready() const { return ring_.total() >= cfg_.window.ready_samples(cfg_.feature_rate_hz()); }
  // Grid column ending at or before the newest sample, if computed.
  std::optional<std::size_t> latest_column() const;
  // Newest steps() columns, or nullopt when not ready.
  std::optional<TensorView> latest_window() const;
  // Time (s since stream start) at which column k's window ends.
  double column_time_s(std::size_t k) const;

  void set_parallel(bool on) { parallel_ = on; }

 private:
  void flush_columns();

  std::size_t channels_;
  FrontEndConfig cfg_;
  std::vector<SosFilter> filters_;
  SampleRing ring_;
  SampleRing log_ring_;  // log(|x| + log_eps) per sample, shared by overlapping windows
  FeatureMatrix columns_;
  std::size_t keep_columns_;
  std::size_t window_;
  std::size_t step_;
  std::size_t raw_count_ = 0;
  std::size_t next_column_ = 0;  // next grid column index to compute
  bool parallel_ = true;
  std::vector<double> scratch_, log_scratch_;
};

}  // namespace nd
