#include "nd/synthgen.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <sstream>

#include "nd/byteio.hpp"
#include "nd/error.hpp"

namespace nd {

namespace {

std::uint64_t splitmix(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

constexpr std::size_t kLabelPeriod = static_cast<std::size_t>(kSynthRateHz / kLabelRateHz);

std::size_t duration_samples(double seconds, const char* what) {
  const double periods = seconds * kLabelRateHz;
  if (!(seconds > 0) || std::fabs(periods - std::round(periods)) > 1e-9)
    throw ConfigError(std::string(what) + " must be a positive multiple of 20 ms");
  return static_cast<std::size_t>(std::llround(periods)) * kLabelPeriod;
}

std::string segment_stem(std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "seg_%04zu", i);
  return buf;
}

std::vector<GestureLabel> parse_gestures(const nlohmann::json& j) {
  std::vector<GestureLabel> out;
  for (const auto& g : j) out.push_back(GestureLabel::parse(g.get<std::string>()));
  return out;
}

}  // namespace

void SubjectProfile::validate() const {
  if (channels == 0 || channels > 16) throw ConfigError("profile channel count must be 1..16");
  for (std::size_t d = 0; d < kDofCount; ++d) {
    if (gains[d].size() != channels) throw ConfigError("profile gain row has the wrong length");
    for (double g : gains[d])
      if (!(g >= 0) || !std::isfinite(g)) throw ConfigError("profile gains must be finite and non-negative");
  }
  if (!(burst.rate_hz > 0) || !(burst.width_ms > 0) || !(burst.amplitude >= 0))
    throw ConfigError("burst rate and width must be positive");
  if (pulse_samples() < 2) throw ConfigError("burst width shorter than two samples");
  if (!(noise_floor > 0) || !std::isfinite(noise_floor)) throw ConfigError("noise floor must be positive");
}

std::size_t SubjectProfile::pulse_samples() const {
  return static_cast<std::size_t>(std::llround(burst.width_ms * kSynthRateHz / 1000.0));
}

double SubjectProfile::burst_power() const {
  const std::size_t w = pulse_samples();
  double energy = 0;
  for (std::size_t i = 0; i < w; ++i) {
    const double v = burst.amplitude * std::sin(2 * std::numbers::pi * static_cast<double>(i) / static_cast<double>(w));
    energy += v * v;
  }
  return burst.rate_hz / kSynthRateHz * energy;
}

void SubjectProfile::calibrate() {
  const double rest = noise_floor * noise_floor;
  // flex_db = snr * rest_db  <=>  rest + P_burst = rest^snr
  const double target = std::pow(rest, snr_target) - rest;
  if (!(target > 0)) throw ConfigError("SNR target not reachable with this noise floor");
  burst.amplitude = 1.0;
  burst.amplitude = std::sqrt(target / burst_power());
}

std::string SubjectProfile::hash() const {
  const nlohmann::json j = *this;
  const std::string s = j.dump();
  char buf[16];
  std::snprintf(buf, sizeof buf, "%08x", crc32({reinterpret_cast<const std::uint8_t*>(s.data()), s.size()}));
  return buf;
}

SubjectProfile SubjectProfile::benchmark16() {
  SubjectProfile p;
  p.channels = 16;
  for (auto& g : p.gains) g.assign(16, 0.0);
  for (std::size_t f = 0; f < 5; ++f) {
    p.gains[f][2 * f] = 1.0;
    p.gains[f][2 * f + 1] = 1.0;
    if (f > 0) p.gains[f][2 * f - 1] = 0.25;
    if (f < 4) p.gains[f][2 * f + 2] = 0.25;
  }
  p.gains[2][10] = 0.3;
  p.gains[3][10] = 0.3;
  p.gains[3][11] = 0.3;
  p.gains[4][11] = 0.3;
  for (std::size_t c = 12; c < 16; ++c) p.gains[5][c] = 1.5;
  p.wrist_distinct = true;
  p.calibrate();
  return p;
}

SubjectProfile SubjectProfile::ulnar8() {
  SubjectProfile p;
  p.channels = 8;
  for (auto& g : p.gains) g.assign(8, 0.0);
  p.gains[0][0] = 0.35;
  p.gains[0][1] = 0.2;
  p.gains[1][1] = 0.35;
  p.gains[1][2] = 0.2;
  p.gains[2][2] = 0.35;
  p.gains[2][3] = 0.2;
  p.gains[3][4] = 1.0;
  p.gains[3][5] = 1.0;
  p.gains[3][6] = 0.2;
  p.gains[4][6] = 1.0;
  p.gains[4][7] = 1.0;
  p.gains[4][5] = 0.2;
  p.wrist_distinct = false;
  p.calibrate();
  return p;
}

void to_json(nlohmann::json& j, const SubjectProfile& p) {
  j = nlohmann::json{{"channels", p.channels},
                     {"gains", p.gains},
                     {"burst", {{"rate_hz", p.burst.rate_hz}, {"amplitude", p.burst.amplitude}, {"width_ms", p.burst.width_ms}}},
                     {"noise_floor", p.noise_floor},
                     {"snr_target", p.snr_target},
                     {"wrist_distinct", p.wrist_distinct}};
}

void from_json(const nlohmann::json& j, SubjectProfile& p) {
  p.channels = j.at("channels").get<std::size_t>();
  p.gains = j.at("gains").get<std::array<std::vector<double>, kDofCount>>();
  const auto& b = j.at("burst");
  p.burst.rate_hz = b.at("rate_hz").get<double>();
  p.burst.amplitude = b.at("amplitude").get<double>();
  p.burst.width_ms = b.at("width_ms").get<double>();
  p.noise_floor = j.at("noise_floor").get<double>();
  p.snr_target = j.at("snr_target").get<double>();
  p.wrist_distinct = j.value("wrist_distinct", false);
  p.validate();
}

void to_json(nlohmann::json& j, const DriftSpec& d) {
  j = nlohmann::json{{"gain_drift_per_day", d.gain_drift_per_day},
                     {"baseline_shift_per_day", d.baseline_shift_per_day},
                     {"burst_rate_drift_per_day", d.burst_rate_drift_per_day}};
}

void from_json(const nlohmann::json& j, DriftSpec& d) {
  d.gain_drift_per_day = j.value("gain_drift_per_day", 0.0);
  d.baseline_shift_per_day = j.value("baseline_shift_per_day", 0.0);
  d.burst_rate_drift_per_day = j.value("burst_rate_drift_per_day", 0.0);
}

SubjectProfile apply_drift(const SubjectProfile& profile, const DriftSpec& drift, int days) {
  if (days < 0) throw ConfigError("drift days must be non-negative");
  SubjectProfile out = profile;
  if (days == 0) return out;
  const double t = static_cast<double>(days);
  const std::size_t C = profile.channels;
  for (std::size_t d = 0; d < kDofCount; ++d)
    for (std::size_t c = 0; c < C; ++c) {
      const double g = profile.gains[d][c];
      out.gains[d][c] = std::max(0.0, g + t * drift.gain_drift_per_day * (profile.gains[d][(c + 1) % C] - g));
    }
  out.noise_floor += t * drift.baseline_shift_per_day;
  out.burst.rate_hz += t * drift.burst_rate_drift_per_day;
  out.validate();
  return out;
}

void SessionSpec::validate() const {
  if (gestures.empty()) throw ConfigError("session needs at least one gesture");
  if (repetitions < 1) throw ConfigError("repetitions must be at least 1");
  duration_samples(hold_s, "hold time");
  duration_samples(rest_s, "rest time");
  if (day_index < 0) throw ConfigError("day index must be non-negative");
}

std::vector<GestureLabel> SessionSpec::benchmark_gestures() {
  std::vector<GestureLabel> g;
  for (const char* s : {"100000", "010000", "001000", "000100", "000010", "111110", "000001"}) g.push_back(GestureLabel::parse(s));
  return g;
}

void to_json(nlohmann::json& j, const SessionSpec& s) {
  std::vector<std::string> g;
  for (auto x : s.gestures) g.push_back(x.str());
  j = nlohmann::json{{"gestures", g},           {"repetitions", s.repetitions}, {"hold_s", s.hold_s},
                     {"rest_s", s.rest_s},      {"session_id", s.session_id},   {"day_index", s.day_index}};
}

void from_json(const nlohmann::json& j, SessionSpec& s) {
  s.gestures = parse_gestures(j.at("gestures"));
  s.repetitions = j.value("repetitions", std::size_t{10});
  s.hold_s = j.value("hold_s", 2.0);
  s.rest_s = j.value("rest_s", 2.0);
  s.session_id = j.value("session_id", std::string("session"));
  s.day_index = j.value("day_index", 0);
  s.validate();
}

SignalSynth::SignalSynth(const SubjectProfile& profile, std::uint64_t seed)
    : profile_(profile), noise_rng_(splitmix(seed)), normal_(0.0, 1.0) {
  profile_.validate();
  for (std::size_t d = 0; d < kDofCount; ++d) event_rng_[d].seed(splitmix(seed ^ (0xD0F0ULL + d)));
  const std::size_t w = profile_.pulse_samples();
  pulse_.resize(w);
  for (std::size_t i = 0; i < w; ++i)
    pulse_[i] = profile_.burst.amplitude * std::sin(2 * std::numbers::pi * static_cast<double>(i) / static_cast<double>(w));
  tail_.assign(profile_.channels * w, 0.0);
}

void SignalSynth::render(GestureLabel gesture, std::size_t n, double* out, std::size_t stride) {
  const std::size_t C = profile_.channels, w = pulse_.size(), span = n + w;
  acc_.assign(C * span, 0.0);
  for (std::size_t c = 0; c < C; ++c) std::copy_n(tail_.data() + c * w, w, acc_.data() + c * span);

  const double mean_gap = kSynthRateHz / profile_.burst.rate_hz;
  std::exponential_distribution<double> gap(1.0 / mean_gap);
  const double end = static_cast<double>(pos_ + n);
  for (std::size_t d = 0; d < kDofCount; ++d) {
    if (!gesture.flexed(d)) {
      armed_[d] = false;
      continue;
    }
    double next;
    if (!armed_[d]) {
      next = static_cast<double>(pos_) + gap(event_rng_[d]);
      armed_[d] = true;
    } else {
      next = next_event_[d];
    }
    while (next < end) {
      const std::size_t s = static_cast<std::size_t>(next) - pos_;
      for (std::size_t c = 0; c < C; ++c) {
        const double g = profile_.gains[d][c];
        if (g == 0.0) continue;
        double* a = acc_.data() + c * span + s;
        for (std::size_t i = 0; i < w; ++i) a[i] += g * pulse_[i];
      }
      next += gap(event_rng_[d]);
    }
    next_event_[d] = next;
  }

  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t c = 0; c < C; ++c)
      out[c * stride + i] =
          static_cast<double>(static_cast<float>(profile_.noise_floor * normal_(noise_rng_) + acc_[c * span + i]));
  for (std::size_t c = 0; c < C; ++c) std::copy_n(acc_.data() + c * span + n, w, tail_.data() + c * w);
  pos_ += n;
}

Recording SignalSynth::render(GestureLabel gesture, std::size_t n) {
  Recording rec = Recording::zeros(kSynthRateHz, profile_.channels, n);
  std::vector<double> buf(profile_.channels * n);
  render(gesture, n, buf.data(), n);
  for (std::size_t c = 0; c < profile_.channels; ++c)
    std::copy_n(buf.data() + c * n, n, rec.samples[c].begin());
  return rec;
}

std::vector<LabelRow> segment_labels(const SegmentPlan& seg) {
  std::vector<LabelRow> rows;
  const std::size_t first = (seg.start_sample + kLabelPeriod - 1) / kLabelPeriod;
  for (std::size_t j = first; j * kLabelPeriod < seg.start_sample + seg.length; ++j)
    rows.push_back({static_cast<std::int64_t>(j * kLabelPeriod * 1000 / kSynthRateHz), seg.gesture});
  return rows;
}

LabeledSegment generate_segment(const SegmentPlan& seg, const SubjectProfile& profile) {
  SignalSynth synth(profile, seg.seed);
  return {synth.render(seg.gesture, seg.length), segment_labels(seg)};
}

std::vector<SegmentPlan> plan_session(const SessionSpec& spec, std::uint64_t seed) {
  spec.validate();
  const std::size_t hold = duration_samples(spec.hold_s, "hold time");
  const std::size_t rest = duration_samples(spec.rest_s, "rest time");
  std::vector<SegmentPlan> out;
  std::size_t pos = 0;
  auto add = [&](GestureLabel g, std::size_t len) {
    SegmentPlan s;
    s.index = out.size();
    s.gesture = g;
    s.seed = splitmix(seed * 0x100000001B3ULL + s.index);
    s.start_sample = pos;
    s.length = len;
    pos += len;
    out.push_back(s);
  };
  add(kRest, rest);
  for (std::size_t r = 0; r < spec.repetitions; ++r)
    for (GestureLabel g : spec.gestures) {
      add(g, hold);
      add(kRest, rest);
    }
  return out;
}

std::size_t DatasetManifest::total_samples() const {
  return segments.empty() ? 0 : segments.back().start_sample + segments.back().length;
}

std::size_t DatasetManifest::active_segments() const {
  std::size_t n = 0;
  for (const auto& s : segments) n += !s.gesture.is_rest();
  return n;
}

void to_json(nlohmann::json& j, const DatasetManifest& m) {
  nlohmann::json segs = nlohmann::json::array();
  for (const auto& s : m.segments) {
    const std::string stem = segment_stem(s.index);
    segs.push_back({{"index", s.index},
                    {"gesture", s.gesture.str()},
                    {"seed", s.seed},
                    {"start_sample", s.start_sample},
                    {"length", s.length},
                    {"day_index", m.spec.day_index},
                    {"recording", stem + ".nrd"},
                    {"labels", stem + ".labels.csv"}});
  }
  j = nlohmann::json{{"schema_version", m.schema_version},
                     {"profile", m.profile},
                     {"profile_hash", m.profile.hash()},
                     {"spec", m.spec},
                     {"seed", m.seed},
                     {"sample_rate_hz", m.sample_rate_hz},
                     {"segments", segs}};
}

void from_json(const nlohmann::json& j, DatasetManifest& m) {
  m.schema_version = j.at("schema_version").get<int>();
  if (m.schema_version != 1) throw LoadError("unsupported dataset schema version " + std::to_string(m.schema_version));
  m.profile = j.at("profile").get<SubjectProfile>();
  m.spec = j.at("spec").get<SessionSpec>();
  m.seed = j.at("seed").get<std::uint64_t>();
  m.sample_rate_hz = j.at("sample_rate_hz").get<int>();
  m.segments.clear();
  for (const auto& s : j.at("segments")) {
    SegmentPlan p;
    p.index = s.at("index").get<std::size_t>();
    p.gesture = GestureLabel::parse(s.at("gesture").get<std::string>());
    p.seed = s.at("seed").get<std::uint64_t>();
    p.start_sample = s.at("start_sample").get<std::size_t>();
    p.length = s.at("length").get<std::size_t>();
    m.segments.push_back(p);
  }
}

std::string write_labels_csv(const std::vector<LabelRow>& rows) {
  std::string out = "timestamp_ms,gesture\n";
  for (const auto& r : rows) out += std::to_string(r.timestamp_ms) + "," + r.gesture.str() + "\n";
  return out;
}

std::vector<LabelRow> parse_labels_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line != "timestamp_ms,gesture") throw DataError("label file lacks the timestamp_ms,gesture header");
  std::vector<LabelRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto comma = line.find(',');
    if (comma == std::string::npos) throw DataError("malformed label row: " + line);
    LabelRow r;
    try {
      r.timestamp_ms = std::stoll(line.substr(0, comma));
    } catch (const std::exception&) {
      throw DataError("malformed label timestamp: " + line);
    }
    r.gesture = GestureLabel::parse(line.substr(comma + 1));
    rows.push_back(r);
  }
  return rows;
}

DatasetManifest generate_session(const SubjectProfile& profile, const SessionSpec& spec, std::uint64_t seed,
                                 const std::filesystem::path& dir, bool force) {
  profile.validate();
  namespace fs = std::filesystem;
  if (fs::exists(dir) && !fs::is_empty(dir) && !force)
    throw ConfigError("output directory " + dir.string() + " is not empty (use --force)");
  fs::create_directories(dir);
  DatasetManifest m;
  m.profile = profile;
  m.spec = spec;
  m.seed = seed;
  m.segments = plan_session(spec, seed);
  for (const auto& s : m.segments) {
    const auto seg = generate_segment(s, profile);
    const std::string stem = segment_stem(s.index);
    write_nrd1((dir / (stem + ".nrd")).string(), seg.recording);
    const std::string csv = write_labels_csv(seg.labels);
    write_file_bytes((dir / (stem + ".labels.csv")).string(),
                     {reinterpret_cast<const std::uint8_t*>(csv.data()), csv.size()});
  }
  const std::string text = nlohmann::json(m).dump(2) + "\n";
  write_file_bytes((dir / "manifest.json").string(), {reinterpret_cast<const std::uint8_t*>(text.data()), text.size()});
  return m;
}

Dataset Dataset::open(const std::filesystem::path& dir) {
  const auto path = dir / "manifest.json";
  if (!std::filesystem::exists(path)) throw ConfigError("no dataset manifest at " + path.string());
  const auto bytes = read_file_bytes(path.string());
  Dataset d;
  d.dir_ = dir;
  try {
    d.manifest_ = nlohmann::json::parse(bytes.begin(), bytes.end()).get<DatasetManifest>();
  } catch (const nlohmann::json::exception& e) {
    throw LoadError("bad dataset manifest " + path.string() + ": " + e.what());
  }
  return d;
}

Recording Dataset::recording(std::size_t i) const {
  const auto& s = manifest_.segments.at(i);
  Recording r = read_nrd1((dir_ / (segment_stem(i) + ".nrd")).string());
  if (r.length() != s.length || r.channel_count() != manifest_.profile.channels || r.sample_rate_hz != manifest_.sample_rate_hz)
    throw DataError("segment " + std::to_string(i) + " does not match the manifest");
  return r;
}

std::vector<LabelRow> Dataset::labels(std::size_t i) const {
  const auto bytes = read_file_bytes((dir_ / (segment_stem(i) + ".labels.csv")).string());
  return parse_labels_csv(std::string(bytes.begin(), bytes.end()));
}

}  // namespace nd
