#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <random>

#include "nd/byteio.hpp"
#include "nd/error.hpp"
#include "nd/sigproc.hpp"
#include "nd/synthgen.hpp"

namespace fs = std::filesystem;
using namespace nd;

namespace {

fs::path scratch_dir(const std::string& name) {
  auto p = fs::temp_directory_path() / ("nd_test_" + name + "_" + std::to_string(::getpid()));
  fs::remove_all(p);
  return p;
}

SessionSpec short_spec() {
  SessionSpec s;
  s.gestures = {GestureLabel::parse("100000"), GestureLabel::parse("000001")};
  s.repetitions = 2;
  s.hold_s = 0.4;
  s.rest_s = 0.2;
  return s;
}

}  // namespace

TEST(Synthgen, RestPowerMatchesNoiseFloor) {
  const auto prof = SubjectProfile::benchmark16();
  SignalSynth synth(prof, 7);
  const auto rec = synth.render(kRest, 200000);
  for (std::size_t c : {0U, 7U, 15U}) {
    const double db = signal_power_db(rec.samples[c]);
    EXPECT_NEAR(db, 10 * std::log10(prof.noise_floor * prof.noise_floor), 1.0) << "channel " << c;
  }
}

TEST(Synthgen, UnitGainChannelReachesSnrTarget) {
  const auto prof = SubjectProfile::benchmark16();
  SignalSynth synth(prof, 11);
  const auto rest = synth.render(kRest, 200000);
  const auto flex = synth.render(GestureLabel::parse("100000"), 200000);
  ASSERT_EQ(prof.gains[0][0], 1.0);
  const auto rep = measure_snr(flex.samples[0], rest.samples[0]);
  EXPECT_NEAR(rep.snr, prof.snr_target, 0.15 * prof.snr_target);
}

TEST(Synthgen, CalibrationSolvesTheDbRatio) {
  auto prof = SubjectProfile::benchmark16();
  const double rest = prof.noise_floor * prof.noise_floor;
  const double flex = rest + prof.burst_power();
  EXPECT_NEAR(10 * std::log10(flex) / (10 * std::log10(rest)), prof.snr_target, 1e-12);
}

TEST(Synthgen, SameSeedSameSamples) {
  const auto prof = SubjectProfile::ulnar8();
  SignalSynth a(prof, 3), b(prof, 3), c(prof, 4);
  const auto g = GestureLabel::parse("000110");
  const auto ra = a.render(g, 5000), rb = b.render(g, 5000), rc = c.render(g, 5000);
  EXPECT_EQ(ra.samples, rb.samples);
  EXPECT_NE(ra.samples, rc.samples);
}

TEST(Synthgen, OutputIndependentOfCallSplit) {
  const auto prof = SubjectProfile::benchmark16();
  const std::vector<std::pair<GestureLabel, std::size_t>> script = {
      {kRest, 3000}, {GestureLabel::parse("111110"), 4000}, {GestureLabel::parse("000001"), 2500}, {kRest, 1500}};
  std::size_t total = 0;
  for (const auto& s : script) total += s.second;

  SignalSynth whole(prof, 99);
  std::vector<double> a(prof.channels * total);
  std::size_t pos = 0;
  for (const auto& [g, n] : script) {
    whole.render(g, n, a.data() + pos, total);
    pos += n;
  }

  SignalSynth split(prof, 99);
  std::vector<double> b(prof.channels * total);
  std::mt19937 rng(5);
  pos = 0;
  for (const auto& [g, n] : script) {
    std::size_t left = n;
    while (left > 0) {
      const std::size_t len = std::min<std::size_t>(left, 1 + rng() % 97);
      split.render(g, len, b.data() + pos, total);
      pos += len;
      left -= len;
    }
  }
  EXPECT_EQ(a, b);
  EXPECT_EQ(split.position(), total);
}

TEST(Synthgen, OutputIsFloatExact) {
  SignalSynth s(SubjectProfile::ulnar8(), 1);
  const auto r = s.render(GestureLabel::parse("000010"), 2000);
  for (const auto& ch : r.samples)
    for (double v : ch) ASSERT_EQ(v, static_cast<double>(static_cast<float>(v)));
}

TEST(Synthgen, BenchmarkSessionLayout) {
  SessionSpec spec;
  spec.gestures = SessionSpec::benchmark_gestures();
  const auto plan = plan_session(spec, 1);
  DatasetManifest m;
  m.segments = plan;
  EXPECT_EQ(plan.size(), 141U);
  EXPECT_EQ(m.active_segments(), 70U);
  EXPECT_EQ(m.total_samples(), 141U * 20000U);
  for (std::size_t i = 1; i < plan.size(); ++i) EXPECT_EQ(plan[i].start_sample, plan[i - 1].start_sample + plan[i - 1].length);
}

TEST(Synthgen, SegmentLabelsEvery20ms) {
  SegmentPlan seg;
  seg.gesture = GestureLabel::parse("010000");
  seg.start_sample = 20000;
  seg.length = 4000;
  const auto rows = segment_labels(seg);
  ASSERT_EQ(rows.size(), 20U);
  EXPECT_EQ(rows.front().timestamp_ms, 2000);
  EXPECT_EQ(rows.back().timestamp_ms, 2380);
  for (const auto& r : rows) EXPECT_EQ(r.gesture, seg.gesture);
}

TEST(Synthgen, LabelsCsvRoundTrip) {
  std::vector<LabelRow> rows = {{0, kRest}, {20, GestureLabel::parse("111110")}, {40, GestureLabel::parse("000001")}};
  const auto text = write_labels_csv(rows);
  EXPECT_EQ(text.rfind("timestamp_ms,gesture\n", 0), 0U);
  EXPECT_EQ(parse_labels_csv(text), rows);
  EXPECT_THROW(parse_labels_csv("timestamp_ms,gesture\n0,12\n"), DataError);
}

TEST(Synthgen, BadGestureStringRejected) {
  EXPECT_THROW(GestureLabel::parse("10000"), DataError);
  EXPECT_THROW(GestureLabel::parse("10000x"), DataError);
}

TEST(Synthgen, DriftIsLinearInDays) {
  const auto prof = SubjectProfile::benchmark16();
  DriftSpec d{0.002, 0.01, -0.1};
  EXPECT_EQ(apply_drift(prof, d, 0).gains, prof.gains);
  const auto p10 = apply_drift(prof, d, 10), p20 = apply_drift(prof, d, 20);
  for (std::size_t dof = 0; dof < kDofCount; ++dof)
    for (std::size_t c = 0; c < prof.channels; ++c)
      EXPECT_NEAR(p20.gains[dof][c] - prof.gains[dof][c], 2 * (p10.gains[dof][c] - prof.gains[dof][c]), 1e-12);
  EXPECT_NEAR(p20.noise_floor, prof.noise_floor + 0.2, 1e-12);
  EXPECT_NEAR(p20.burst.rate_hz, prof.burst.rate_hz - 2.0, 1e-12);
  EXPECT_THROW(apply_drift(prof, d, -1), ConfigError);
}

TEST(Synthgen, ProfileJsonRoundTrip) {
  const auto prof = SubjectProfile::ulnar8();
  const nlohmann::json j = prof;
  const auto back = j.get<SubjectProfile>();
  EXPECT_EQ(back.gains, prof.gains);
  EXPECT_EQ(back.burst.amplitude, prof.burst.amplitude);
  EXPECT_EQ(back.hash(), prof.hash());
}

TEST(Synthgen, SessionFilesAreByteIdenticalForSameSeed) {
  const auto a = scratch_dir("synth_a"), b = scratch_dir("synth_b");
  const auto prof = SubjectProfile::ulnar8();
  generate_session(prof, short_spec(), 42, a);
  generate_session(prof, short_spec(), 42, b);
  std::size_t files = 0;
  for (const auto& e : fs::directory_iterator(a)) {
    ++files;
    EXPECT_EQ(read_file_bytes(e.path().string()), read_file_bytes((b / e.path().filename()).string())) << e.path();
  }
  EXPECT_EQ(files, 1U + 2U * 9U);

  const auto ds = Dataset::open(a);
  EXPECT_EQ(ds.size(), 9U);
  EXPECT_EQ(ds.recording(1).length(), 4000U);
  EXPECT_EQ(ds.labels(1).front().gesture, GestureLabel::parse("100000"));
  EXPECT_EQ(ds.recording(1).samples, generate_segment(ds.manifest().segments[1], prof).recording.samples);
  fs::remove_all(a);
  fs::remove_all(b);
}

TEST(Synthgen, RefusesNonEmptyDirectoryWithoutForce) {
  const auto dir = scratch_dir("synth_force");
  const auto prof = SubjectProfile::ulnar8();
  generate_session(prof, short_spec(), 1, dir);
  EXPECT_THROW(generate_session(prof, short_spec(), 1, dir), ConfigError);
  EXPECT_NO_THROW(generate_session(prof, short_spec(), 2, dir, true));
  fs::remove_all(dir);
}

TEST(Synthgen, OpenMissingDatasetIsConfigError) {
  EXPECT_THROW(Dataset::open(scratch_dir("missing")), ConfigError);
}
