#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace nd {

// Multichannel block of raw or filtered samples. samples[c][i] is sample i of
// channel c.
struct Recording {
  int sample_rate_hz = 10000;
  std::vector<std::string> channel_ids;
  std::vector<std::vector<double>> samples;

  static Recording zeros(int sample_rate_hz, std::size_t channels, std::size_t length);

  std::size_t channel_count() const { return samples.size(); }
  std::size_t length() const { return samples.empty() ? 0 : samples.front().size(); }
  double duration_s() const { return static_cast<double>(length()) / sample_rate_hz; }

  // Throws DataError unless channels are non-empty, equal length and the rate
  // clears twice the 600 Hz band edge.
  void validate() const;
};

std::vector<std::string> default_channel_ids(std::size_t channels);

struct BandSpec {
  double low_hz = 25.0;
  double high_hz = 600.0;
  int order = 4;  // Butterworth order of each band edge

  void validate(int sample_rate_hz) const;
};

struct Biquad {
  double b0, b1, b2, a1, a2;
};

// Butterworth band-pass realised as a high-pass cascade followed by a low-pass
// cascade, both of order band.order, in second-order sections.
std::vector<Biquad> design_bandpass(const BandSpec& band, int sample_rate_hz);

// Causal direct-form-II-transposed section cascade for one channel. Starts
// from zero state.
class SosFilter {
 public:
  explicit SosFilter(std::vector<Biquad> sections);

  double step(double x) {
    for (std::size_t s = 0; s < sections_.size(); ++s) {
      const Biquad& q = sections_[s];
      double& z1 = state_[2 * s];
      double& z2 = state_[2 * s + 1];
      const double y = q.b0 * x + z1;
      z1 = q.b1 * x - q.a1 * y + z2;
      z2 = q.b2 * x - q.a2 * y;
      x = y;
    }
    return x;
  }
  void process(std::span<double> samples) {
    for (double& v : samples) v = step(v);
  }
  void reset();
  const std::vector<Biquad>& sections() const { return sections_; }

 private:
  std::vector<Biquad> sections_;
  std::vector<double> state_;
};

Recording bandpass_filter(const Recording& rec, const BandSpec& band);
Recording decimate(const Recording& rec, int factor);

// 10*log10(mean(v^2)); -infinity for an all-zero window.
double signal_power_db(std::span<const double> window);

// Ratio of two dB powers, exactly as printed in the source formula. Throws
// NumericFault on non-finite inputs and on power_rest_db == 0.
double snr(double power_flex_db, double power_rest_db);

struct SnrReport {
  double power_flex_db = 0;
  double power_rest_db = 0;
  double snr = 0;
};

SnrReport measure_snr(std::span<const double> flex_window, std::span<const double> rest_window);

// "NRD1" raw recording container: magic, u32 rate, u16 channels,
// u64 samples per channel, channel-major little-endian float32.
std::vector<std::uint8_t> encode_nrd1(const Recording& rec);
Recording decode_nrd1(std::span<const std::uint8_t> bytes);
void write_nrd1(const std::string& path, const Recording& rec);
Recording read_nrd1(const std::string& path);

}  // namespace nd
