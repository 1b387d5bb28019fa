#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <thread>

#include "fixtures.hpp"
#include "nd/engine.hpp"
#include "nd/error.hpp"
#include "nd/server.hpp"
#include "nd/synthgen.hpp"

using namespace nd;

namespace {

// Random compact model for the eight-channel profile; outputs are arbitrary
// but deterministic, which is all the equivalence checks need.
const Checkpoint& model8() {
  static const Checkpoint ck = [] {
    Checkpoint c;
    c.params = fixtures::random_params(ModelConfig::compact(8 * kFeatureCount, 50), 21);
    c.norm = NormStats::identity(8 * kFeatureCount);
    for (std::size_t r = 0; r < c.norm.rows(); ++r) c.norm.std[r] = 1.0 + static_cast<double>(r % 5);
    return c;
  }();
  return ck;
}

Recording session_recording(double seconds, std::uint64_t seed = 5) {
  SignalSynth synth(SubjectProfile::ulnar8(), seed);
  const auto n = static_cast<std::size_t>(seconds * 10000);
  Recording rec = Recording::zeros(10000, 8, n);
  std::vector<double> buf(8 * n);
  synth.render(kRest, n / 3, buf.data(), n);
  synth.render(GestureLabel::parse("000110"), n / 3, buf.data() + n / 3, n);
  synth.render(kRest, n - 2 * (n / 3), buf.data() + 2 * (n / 3), n);
  for (std::size_t c = 0; c < 8; ++c) std::copy_n(buf.begin() + static_cast<std::ptrdiff_t>(c * n), n, rec.samples[c].begin());
  return rec;
}

EngineConfig engine8(double rate = 10) {
  EngineConfig cfg;
  cfg.channels = 8;
  cfg.prediction_rate_hz = rate;
  return cfg;
}

std::vector<Probabilities> probs(const std::vector<Prediction>& ps) {
  std::vector<Probabilities> out;
  for (const auto& p : ps) out.push_back(p.probabilities);
  return out;
}

}  // namespace

TEST(Engine, TickCountAfterWarmup) {
  const auto rec = session_recording(10);
  for (const auto& [rate, skips] : std::vector<std::pair<double, std::size_t>>{{10, 11}, {25, 28}, {7, 8}, {50, 55}}) {
    RecordingSource src({rec});
    const auto res = run_pipeline(src, model8(), engine8(rate), RunMode::Batch);
    const auto ticks = static_cast<std::size_t>(std::ceil(10 * rate - 1e-9));
    EXPECT_EQ(skips, static_cast<std::size_t>(std::ceil(1.1 * rate - 1e-9)));
    EXPECT_EQ(res.latency.skipped_ticks, skips) << rate;
    EXPECT_EQ(res.predictions.size(), ticks - skips) << rate;
  }
}

TEST(Engine, PredictionsMatchOfflineWindows) {
  const auto rec = session_recording(4);
  RecordingSource src({rec});
  const auto res = run_pipeline(src, model8(), engine8(), RunMode::Batch);
  ASSERT_FALSE(res.predictions.empty());

  FrontEnd offline(8, model8().frontend);
  offline.push(rec);
  for (const auto& p : res.predictions) {
    const std::uint64_t raw = p.timestamp_us * 10000 / 1000000;
    EXPECT_EQ(p.column, raw / 2 / 100);
    auto w = offline.columns().window(p.column, 50);
    std::vector<double> x(w.data, w.data + w.rows * w.steps);
    normalize_in_place(x, w.rows, model8().norm);
    EXPECT_EQ(forward(TensorView{x.data(), w.rows, w.steps}, model8().params), p.probabilities);
    EXPECT_EQ(p.label, threshold(p.probabilities));
  }
}

TEST(Engine, DecoderIndependentOfBlockSplit) {
  const auto rec = session_recording(3);
  const std::size_t n = rec.length();
  std::vector<double> flat(8 * n);
  for (std::size_t c = 0; c < 8; ++c) std::copy(rec.samples[c].begin(), rec.samples[c].end(), flat.begin() + static_cast<std::ptrdiff_t>(c * n));

  StreamDecoder whole(model8(), 20, 8);
  std::vector<Prediction> a, b;
  whole.push(flat.data(), n, n, a);

  StreamDecoder split(model8(), 20, 8);
  std::mt19937 rng(1);
  for (std::size_t pos = 0; pos < n;) {
    const std::size_t len = std::min<std::size_t>(n - pos, 1 + rng() % 1500);
    split.push(flat.data() + pos, len, n, b);
    pos += len;
  }
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].tick, b[i].tick);
    EXPECT_EQ(a[i].timestamp_us, b[i].timestamp_us);
    EXPECT_EQ(a[i].probabilities, b[i].probabilities);
  }
}

TEST(Engine, RealTimeMatchesBatch) {
  const auto rec = session_recording(3);
  RecordingSource s1({rec}), s2({rec});
  auto cfg = engine8();
  cfg.realtime_speed = 10;
  const auto batch = run_pipeline(s1, model8(), cfg, RunMode::Batch);
  std::size_t sunk = 0;
  const auto rt = run_pipeline(s2, model8(), cfg, RunMode::RealTime, [&](const Prediction&) { ++sunk; });
  EXPECT_EQ(rt.latency.dropped_predictions, 0U);
  EXPECT_EQ(sunk, rt.predictions.size());
  EXPECT_EQ(probs(batch.predictions), probs(rt.predictions));
  for (std::size_t i = 0; i < rt.predictions.size(); ++i) {
    const auto& p = rt.predictions[i];
    EXPECT_GE(p.end_to_end_us, p.feature_us + p.decode_us);
  }
  EXPECT_TRUE(rt.latency.consistent());
}

TEST(Engine, LatencyReportIsConsistent) {
  RecordingSource src({session_recording(3)});
  const auto res = run_pipeline(src, model8(), engine8(), RunMode::Batch);
  const auto& l = res.latency;
  EXPECT_EQ(l.frames(), res.predictions.size());
  for (std::size_t i = 0; i < l.frames(); ++i) EXPECT_GE(l.end_to_end_us[i], l.feature_us[i] + l.decode_us[i]);
  EXPECT_TRUE(l.consistent());
  const auto j = l.to_json();
  EXPECT_EQ(j["frames"], l.frames());
  EXPECT_LE(l.decode().p50, l.decode().p95);
  EXPECT_LE(l.decode().p95, l.decode().max);
}

TEST(Engine, Percentiles) {
  std::vector<double> v;
  for (int i = 1; i <= 100; ++i) v.push_back(i);
  EXPECT_EQ(percentile(v, 50), 50);
  EXPECT_EQ(percentile(v, 95), 95);
  EXPECT_EQ(percentile(v, 100), 100);
  EXPECT_EQ(percentile({7.0}, 95), 7.0);
  EXPECT_EQ(percentile({}, 50), 0.0);
}

TEST(EngineConfig, RejectsBadSettings) {
  auto cfg = engine8(4);
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = engine8(51);
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = engine8();
  cfg.channels = 16;
  EXPECT_THROW(cfg.check_model(model8()), ConfigError);
  cfg = engine8();
  cfg.window = FeatureWindowSpec{};
  cfg.window->history_s = 0.5;
  EXPECT_THROW(cfg.check_model(model8()), ConfigError);
  RecordingSource src({session_recording(1)});
  cfg.channels = 16;
  cfg.window.reset();
  EXPECT_THROW(run_pipeline(src, model8(), cfg, RunMode::Batch), ConfigError);
}

TEST(EngineConfig, JsonRoundTripAndStrictKeys) {
  auto cfg = engine8(20);
  cfg.thresholds = FeatureThresholds{};
  cfg.endpoint = "127.0.0.1:9000";
  const nlohmann::json j = cfg;
  const auto back = j.get<EngineConfig>();
  EXPECT_EQ(back.prediction_rate_hz, 20);
  EXPECT_EQ(back.channels, 8U);
  EXPECT_TRUE(back.thresholds.has_value());
  EXPECT_EQ(back.endpoint, "127.0.0.1:9000");
  auto bad = j;
  bad["rat"] = 10;
  EXPECT_THROW(bad.get<EngineConfig>(), ConfigError);
}

TEST(Endpoint, Parse) {
  const auto ep = Endpoint::parse("127.0.0.1:7878");
  EXPECT_EQ(ep.port, 7878);
  EXPECT_EQ(Endpoint::parse("localhost:1").host, "localhost");
  EXPECT_THROW(Endpoint::parse("nohost"), ConfigError);
  EXPECT_THROW(Endpoint::parse("1.2.3.4:99999"), ConfigError);
  EXPECT_THROW(Endpoint::parse("not.an.ip:80"), ConfigError);
}

class ServerTest : public ::testing::Test {
 protected:
  void SetUp() override {
    server_ = std::make_unique<Server>(model8(), engine8());
    server_->bind(Endpoint::parse("127.0.0.1:0"));
    thread_ = std::thread([this] { server_->run(); });
  }
  void TearDown() override {
    server_->stop();
    thread_.join();
  }
  Endpoint endpoint() const { return {"127.0.0.1", server_->port()}; }

  std::unique_ptr<Server> server_;
  std::thread thread_;
};

TEST_F(ServerTest, LoopbackMatchesOfflineAndSessionsAreIndependent) {
  const auto rec = session_recording(3);
  RecordingSource offline_src({rec});
  const auto offline = run_pipeline(offline_src, model8(), engine8(), RunMode::Batch);

  for (int round = 0; round < 2; ++round) {
    RecordingSource src({rec});
    const auto got = stream_source(endpoint(), src, 333);
    EXPECT_FALSE(got.error.has_value());
    ASSERT_EQ(got.predictions.size(), offline.predictions.size());
    for (std::size_t i = 0; i < got.predictions.size(); ++i) {
      const auto& p = offline.predictions[i];
      EXPECT_EQ(got.predictions[i].timestamp_us, p.timestamp_us);
      EXPECT_EQ(got.predictions[i].mask, p.label.mask());
      for (std::size_t d = 0; d < kDofCount; ++d) EXPECT_EQ(got.predictions[i].probabilities[d], static_cast<float>(p.probabilities[d]));
    }
    ASSERT_TRUE(got.latency.has_value());
    EXPECT_EQ(got.latency->frames, offline.predictions.size());
    EXPECT_EQ(got.latency->skipped_ticks, offline.latency.skipped_ticks);
  }
  EXPECT_EQ(server_->stats().sessions, 2U);
}

TEST_F(ServerTest, GarbageGetsErrorFrameAndServerStaysUp) {
  {
    auto conn = Connection::open(endpoint());
    const std::vector<std::uint8_t> junk = {0xDE, 0xAD, 0xBE, 0xEF, 0, 0, 0, 0, 1, 2, 3, 4};
    conn.send(junk);
    auto msg = conn.receive();
    ASSERT_TRUE(msg.has_value());
    const auto* err = std::get_if<ErrorMsg>(&*msg);
    ASSERT_NE(err, nullptr);
    EXPECT_EQ(err->offset, 0U);
    EXPECT_FALSE(conn.receive().has_value());
  }
  {
    auto conn = Connection::open(endpoint());
    SampleBlockMsg sb;
    sb.first_sample_index = 5;
    sb.channels = 8;
    sb.samples_per_channel = 1;
    sb.data.assign(8, 0.0f);
    conn.send(sb);
    auto msg = conn.receive();
    ASSERT_TRUE(msg.has_value());
    EXPECT_TRUE(std::holds_alternative<ErrorMsg>(*msg));
  }
  RecordingSource src({session_recording(1.5)});
  const auto ok = stream_source(endpoint(), src);
  EXPECT_FALSE(ok.error.has_value());
  EXPECT_EQ(ok.predictions.size(), 15U - 11U);
  EXPECT_EQ(server_->stats().rejected_sessions, 2U);
}

TEST(Server, PortInUseIsConfigError) {
  Server a(model8(), engine8());
  a.bind(Endpoint::parse("127.0.0.1:0"));
  Server b(model8(), engine8());
  EXPECT_THROW(b.bind({"127.0.0.1", a.port()}), ConfigError);
}
