#include "nd/sigproc.hpp"

#include <cmath>
#include <numbers>

#include "nd/byteio.hpp"
#include "nd/error.hpp"

namespace nd {

namespace {
constexpr double kBandUpperEdgeHz = 600.0;
constexpr std::uint8_t kNrdMagic[4] = {'N', 'R', 'D', '1'};
}  // namespace

Recording Recording::zeros(int sample_rate_hz, std::size_t channels, std::size_t length) {
  Recording r;
  r.sample_rate_hz = sample_rate_hz;
  r.channel_ids = default_channel_ids(channels);
  r.samples.assign(channels, std::vector<double>(length, 0.0));
  return r;
}

std::vector<std::string> default_channel_ids(std::size_t channels) {
  std::vector<std::string> ids;
  ids.reserve(channels);
  for (std::size_t c = 0; c < channels; ++c) ids.push_back("ch" + std::to_string(c));
  return ids;
}

void Recording::validate() const {
  if (samples.empty()) throw DataError("recording has no channels");
  if (samples.size() > 16) throw DataError("recording has more than 16 channels");
  if (channel_ids.size() != samples.size()) throw DataError("channel id count does not match channel count");
  const auto n = samples.front().size();
  if (n == 0) throw DataError("recording is empty");
  for (const auto& ch : samples)
    if (ch.size() != n) throw DataError("channels have unequal length");
  if (sample_rate_hz <= 2 * kBandUpperEdgeHz) throw DataError("sample rate must exceed twice the 600 Hz band edge");
}

void BandSpec::validate(int sample_rate_hz) const {
  if (!(low_hz > 0.0) || !(low_hz < high_hz))
    throw ConfigError("band edges must satisfy 0 < low < high");
  if (!(high_hz < sample_rate_hz / 2.0)) throw ConfigError("band upper edge must be below Nyquist");
  if (order <= 0 || order % 2 != 0) throw ConfigError("filter order must be an even positive integer");
}

std::vector<Biquad> design_bandpass(const BandSpec& band, int sample_rate_hz) {
  band.validate(sample_rate_hz);
  std::vector<Biquad> out;
  const int pairs = band.order / 2;
  // Bilinear transform with prewarped edges. Pole pair k of an order-N
  // Butterworth prototype has Q = 1 / (2 sin((2k+1) pi / (2N))).
  auto section = [&](double fc, int k, bool highpass) {
    const double kk = std::tan(std::numbers::pi * fc / sample_rate_hz);
    const double theta = std::numbers::pi * (2.0 * k + 1.0) / (2.0 * band.order);
    const double q = 1.0 / (2.0 * std::sin(theta));
    const double norm = 1.0 / (1.0 + kk / q + kk * kk);
    Biquad s{};
    if (highpass) {
      s.b0 = norm;
      s.b1 = -2.0 * norm;
      s.b2 = norm;
    } else {
      s.b0 = kk * kk * norm;
      s.b1 = 2.0 * s.b0;
      s.b2 = s.b0;
    }
    s.a1 = 2.0 * (kk * kk - 1.0) * norm;
    s.a2 = (1.0 - kk / q + kk * kk) * norm;
    return s;
  };
  for (int k = 0; k < pairs; ++k) out.push_back(section(band.low_hz, k, true));
  for (int k = 0; k < pairs; ++k) out.push_back(section(band.high_hz, k, false));
  return out;
}

SosFilter::SosFilter(std::vector<Biquad> sections)
    : sections_(std::move(sections)), state_(2 * sections_.size(), 0.0) {}

void SosFilter::reset() { std::fill(state_.begin(), state_.end(), 0.0); }

Recording bandpass_filter(const Recording& rec, const BandSpec& band) {
  rec.validate();
  const auto sos = design_bandpass(band, rec.sample_rate_hz);
  Recording out = rec;
  for (auto& ch : out.samples) {
    SosFilter f(sos);
    f.process(ch);
  }
  return out;
}

Recording decimate(const Recording& rec, int factor) {
  if (factor <= 0) throw ConfigError("decimation factor must be positive");
  if (rec.sample_rate_hz % factor != 0) throw ConfigError("decimation factor must divide the sample rate");
  Recording out;
  out.sample_rate_hz = rec.sample_rate_hz / factor;
  out.channel_ids = rec.channel_ids;
  out.samples.reserve(rec.channel_count());
  for (const auto& ch : rec.samples) {
    std::vector<double> d;
    d.reserve(ch.size() / static_cast<std::size_t>(factor) + 1);
    for (std::size_t i = 0; i < ch.size(); i += static_cast<std::size_t>(factor)) d.push_back(ch[i]);
    out.samples.push_back(std::move(d));
  }
  return out;
}

double signal_power_db(std::span<const double> window) {
  if (window.empty()) throw DataError("power of an empty window");
  double sum = 0.0;
  for (double v : window) sum += v * v;
  if (sum == 0.0) return -std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(sum / static_cast<double>(window.size()));
}

double snr(double power_flex_db, double power_rest_db) {
  if (!std::isfinite(power_flex_db) || !std::isfinite(power_rest_db))
    throw NumericFault("SNR of a non-finite power (all-zero window?)");
  if (power_rest_db == 0.0) throw NumericFault("SNR undefined for a 0 dB rest power");
  return power_flex_db / power_rest_db;
}

SnrReport measure_snr(std::span<const double> flex_window, std::span<const double> rest_window) {
  SnrReport r;
  r.power_flex_db = signal_power_db(flex_window);
  r.power_rest_db = signal_power_db(rest_window);
  r.snr = snr(r.power_flex_db, r.power_rest_db);
  return r;
}

std::vector<std::uint8_t> encode_nrd1(const Recording& rec) {
  if (rec.samples.empty()) throw DataError("cannot encode a recording without channels");
  const auto n = rec.length();
  for (const auto& ch : rec.samples)
    if (ch.size() != n) throw DataError("channels have unequal length");
  ByteWriter w;
  w.buffer().reserve(18 + rec.channel_count() * n * 4);
  w.bytes(kNrdMagic);
  w.u32(static_cast<std::uint32_t>(rec.sample_rate_hz));
  w.u16(static_cast<std::uint16_t>(rec.channel_count()));
  w.u64(n);
  for (const auto& ch : rec.samples)
    for (double v : ch) w.f32(static_cast<float>(v));
  return w.take();
}

Recording decode_nrd1(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes);
  const auto magic = r.bytes(4);
  if (!std::equal(magic.begin(), magic.end(), kNrdMagic)) throw LoadError("not an NRD1 recording");
  Recording rec;
  rec.sample_rate_hz = static_cast<int>(r.u32());
  const auto channels = r.u16();
  const auto n = r.u64();
  if (r.remaining() != static_cast<std::size_t>(channels) * n * 4) throw LoadError("NRD1 payload size mismatch");
  rec.channel_ids = default_channel_ids(channels);
  rec.samples.assign(channels, std::vector<double>(n));
  for (auto& ch : rec.samples)
    for (auto& v : ch) v = r.f32();
  return rec;
}

void write_nrd1(const std::string& path, const Recording& rec) { write_file_bytes(path, encode_nrd1(rec)); }

Recording read_nrd1(const std::string& path) { return decode_nrd1(read_file_bytes(path)); }

}  // namespace nd
