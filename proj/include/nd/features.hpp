#pragma once

#include <array>
#include <cstddef>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

namespace nd {

inline constexpr std::size_t kFeatureCount = 14;

enum class Feature : std::size_t { ZC, SSC, WL, WA, MAB, MSQ, RMS, V3, LD, DABS, MFL, MPR, MAVS, WMA };

inline constexpr std::array<std::string_view, kFeatureCount> kFeatureNames = {
    "ZC", "SSC", "WL", "WA", "MAB", "MSQ", "RMS", "V3", "LD", "DABS", "MFL", "MPR", "MAVS", "WMA"};

struct FeatureThresholds {
  double zc = 0.0;        // minimum step for a zero crossing
  double ssc = 0.0;       // minimum slope product for a slope sign change
  double wamp = 0.05;     // Wilson amplitude step threshold
  double mpr = 0.05;      // myopulse amplitude threshold
  double log_eps = 1e-12; // floor inside LD and MFL logarithms
};

using FeatureVector = std::array<double, kFeatureCount>;

inline double& at(FeatureVector& v, Feature f) { return v[static_cast<std::size_t>(f)]; }
inline double at(const FeatureVector& v, Feature f) { return v[static_cast<std::size_t>(f)]; }

// All 14 time-domain features of one window in a single pass. Throws
// DataError for windows shorter than 4 samples or containing NaN.
FeatureVector extract_features(std::span<const double> window, const FeatureThresholds& thr);
// Same result, reading log(|x[i]| + thr.log_eps) from logs[i] instead of
// computing it (streaming callers cache it once per sample).
FeatureVector extract_features(std::span<const double> window, std::span<const double> logs, const FeatureThresholds& thr);

struct FeatureWindowSpec {
  double window_ms = 100.0;
  double step_ms = 20.0;
  double history_s = 1.0;

  void validate() const;
  std::size_t steps() const;
  std::size_t window_samples(int rate_hz) const;
  std::size_t step_samples(int rate_hz) const;
  // Samples needed before the first tensor can be built (history + window).
  std::size_t ready_samples(int rate_hz) const;
};

// Non-owning time-major view of a [rows x steps] decoder input: column t is
// the contiguous run data[t*rows, (t+1)*rows).
struct TensorView {
  const double* data = nullptr;
  std::size_t rows = 0;
  std::size_t steps = 0;

  double at(std::size_t r, std::size_t t) const { return data[t * rows + r]; }
  std::span<const double> column(std::size_t t) const { return {data + t * rows, rows}; }
};

// Decoder input of shape [channels*14 x steps]; row = channel*14 + feature,
// column order oldest to newest. Stored time-major.
struct FeatureTensor {
  std::size_t channels = 0;
  std::size_t steps = 0;
  std::vector<double> values;
  double end_timestamp_s = 0.0;

  FeatureTensor() = default;
  FeatureTensor(std::size_t channels, std::size_t steps);

  std::size_t rows() const { return channels * kFeatureCount; }
  double& at(std::size_t r, std::size_t t) { return values[t * rows() + r]; }
  double at(std::size_t r, std::size_t t) const { return values[t * rows() + r]; }
  TensorView view() const { return {values.data(), rows(), steps}; }
};

struct NormStats {
  std::vector<double> mean;
  std::vector<double> std;

  std::size_t rows() const { return mean.size(); }
  static NormStats identity(std::size_t rows);
};

FeatureTensor normalize(const FeatureTensor& tensor, const NormStats& stats);
void normalize_in_place(std::span<double> time_major, std::size_t rows, const NormStats& stats);

NormStats fit_norm_stats(std::span<const FeatureTensor> tensors);
NormStats fit_norm_stats(std::span<const TensorView> tensors);

// Per-channel sliding history of the most recent `capacity` samples, kept
// contiguous so windows can be read as spans. Single writer.
class SampleRing {
 public:
  SampleRing(std::size_t channels, std::size_t capacity);

  // Appends one value per channel.
  void push_frame(std::span<const double> frame);
  // Appends n values per channel from channel-major data with the given stride.
  void push_block(const double* data, std::size_t n, std::size_t stride);

  std::size_t channels() const { return buf_.size(); }
  std::size_t capacity() const { return capacity_; }
  // Total samples ever pushed per channel.
  std::size_t total() const { return total_; }
  // Absolute index of the oldest retained sample.
  std::size_t oldest() const { return total_ - (buf_.empty() ? 0 : buf_.front().size()); }

  // Samples [begin, end) in absolute indices. Throws DataError if the range
  // is not retained.
  std::span<const double> view(std::size_t channel, std::size_t begin, std::size_t end) const;

 private:
  void compact();
  std::vector<std::vector<double>> buf_;
  std::size_t capacity_;
  std::size_t total_ = 0;
};

// Builds the tensor whose newest window ends at ring.total(). Returns
// nullopt when fewer than spec.ready_samples() samples have arrived.
std::optional<FeatureTensor> build_feature_tensor(const SampleRing& ring, const FeatureWindowSpec& spec,
                                                  const FeatureThresholds& thr, int rate_hz);

// Growing store of feature columns on the fixed step grid. Column k covers
// the window that ends at sample k*step; first_index() is the oldest column
// still held.
class FeatureMatrix {
 public:
  explicit FeatureMatrix(std::size_t rows = 0) : rows_(rows) {}

  std::size_t rows() const { return rows_; }
  std::size_t first_index() const { return first_; }
  std::size_t end_index() const { return first_ + count_; }
  std::size_t size() const { return count_; }
  bool empty() const { return count_ == 0; }

  void set_first_index(std::size_t k) { first_ = k; }
  std::span<double> append_column();
  std::span<const double> column(std::size_t k) const;
  std::span<double> column(std::size_t k);
  // Contiguous view of the `steps` columns ending at column `last`.
  TensorView window(std::size_t last, std::size_t steps) const;
  bool has_window(std::size_t last, std::size_t steps) const {
    return last + 1 >= steps && last + 1 - steps >= first_ && last < end_index();
  }
  // Drops columns older than end_index() - keep.
  void keep_last(std::size_t keep);
  std::span<double> raw() { return {data_.data() + offset_ * rows_, count_ * rows_}; }

 private:
  std::size_t rows_;
  std::vector<double> data_;
  std::size_t offset_ = 0;  // columns of data_ that precede first_
  std::size_t first_ = 0;
  std::size_t count_ = 0;
};

namespace kernels {

// One feature column (all channels) per requested window end. windows[c] is
// channel c's contiguous sample history whose element 0 has absolute index
// base; ends lists absolute window ends. out receives ends.size() columns.
// logs, if not empty, mirrors channels with cached log(|x| + log_eps).
void extract_columns(std::span<const std::span<const double>> channels, std::size_t base,
                     std::span<const std::size_t> ends, std::size_t window, const FeatureThresholds& thr,
                     std::span<double> out, std::span<const std::span<const double>> logs = {});

namespace serial {
void extract_columns(std::span<const std::span<const double>> channels, std::size_t base,
                     std::span<const std::size_t> ends, std::size_t window, const FeatureThresholds& thr,
                     std::span<double> out, std::span<const std::span<const double>> logs = {});
}  // namespace serial

}  // namespace kernels

}  // namespace nd
