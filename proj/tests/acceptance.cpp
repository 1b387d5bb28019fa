// Acceptance gate: one PASS/FAIL line per criterion on stdout, progress on
// stderr. Exit status is 0 only when every selected criterion passes.
//
//   nd_acceptance [--only 1,2,7]

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <iterator>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <thread>
#include <unistd.h>

#include "fixtures.hpp"
#include "nd/byteio.hpp"
#include "nd/checkpoint.hpp"
#include "nd/chronometry.hpp"
#include "nd/corpus.hpp"
#include "nd/engine.hpp"
#include "nd/metrics.hpp"
#include "nd/server.hpp"
#include "nd/sweep.hpp"
#include "nd/synthgen.hpp"
#include "nd/wire.hpp"
#include "oracle.hpp"

namespace fs = std::filesystem;
using namespace nd;
using Clock = std::chrono::steady_clock;

namespace {

// Tolerances and limits.
constexpr double kInfoTol = 1e-12;
constexpr double kThroughputTol = 0.05;
constexpr double kReportedBps = 6.09;
constexpr double kBalAccTol = 1e-12;
constexpr double kFeatureRelTol = 1e-12;
constexpr double kGradRelTol = 1e-4;
constexpr double kBenchmarkBalAcc = 0.95;
constexpr double kMatchSuccess = 0.99;
constexpr double kMatchRtLo = 0.6, kMatchRtHi = 1.0;
constexpr double kLatencyRatio = 2.0;
constexpr double kRetrainPp = 0.02;
constexpr double kFeatureP95Us = 1000.0, kDecodeP95Us = 20000.0;

constexpr double kLimit1 = 1, kLimit2 = 1, kLimit4 = 10, kLimit5 = 60, kLimit7 = 600, kLimit8 = 300, kLimit10 = 900;

struct Outcome {
  bool pass = false;
  std::string detail;
};

double since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

void progress(const std::string& s) { std::cerr << "  .. " << s << std::endl; }

fs::path scratch(const std::string& name) {
  auto p = fs::temp_directory_path() / ("nd_accept_" + name + "_" + std::to_string(::getpid()));
  fs::remove_all(p);
  return p;
}

// --- shared benchmark state ---

const FrontEndConfig kFrontEnd{};

SessionSpec benchmark_spec() {
  SessionSpec s;
  s.gestures = SessionSpec::benchmark_gestures();
  return s;
}

const LabeledStream& stream_for(const SubjectProfile& p, const SessionSpec& spec, std::uint64_t seed,
                                std::map<std::string, LabeledStream>& cache, const std::string& key) {
  auto it = cache.find(key);
  if (it == cache.end()) it = cache.emplace(key, extract_stream(p, plan_session(spec, seed), kFrontEnd)).first;
  return it->second;
}

std::map<std::string, LabeledStream> g_streams;

const LabeledStream& benchmark_session(std::uint64_t seed) {
  return stream_for(SubjectProfile::benchmark16(), benchmark_spec(), seed, g_streams, "bench" + std::to_string(seed));
}

struct BenchmarkModel {
  TrainingOutcome outcome;
  double seconds = 0;
};

const BenchmarkModel& benchmark_model() {
  static const BenchmarkModel m = [] {
    progress("training the benchmark model (3 seeds)");
    const auto t0 = Clock::now();
    const auto& a = benchmark_session(1);
    const auto& b = benchmark_session(2);
    const LabeledStream* train[] = {&a};
    BenchmarkModel out;
    out.outcome = train_checkpoint(train, b, kFrontEnd, TrainingRecipe::benchmark(a.columns.rows()));
    out.seconds = since(t0);
    return out;
  }();
  return m;
}

// --- criteria ---

Outcome c1() {
  const auto t0 = Clock::now();
  const auto shown = MatchingTaskConfig{}.shown_targets();
  const double bits = info_per_trial(GestureDistribution::rest_half(shown), 2);
  const double t = since(t0);
  return {std::fabs(bits - 5.0) <= kInfoTol && t < kLimit1, fmt("%.15f bits (tol %.0e), %.3f s", bits, kInfoTol, t)};
}

Outcome c2() {
  const auto t0 = Clock::now();
  const auto th = information_throughput(0.992, 5.0, 0.81);
  const double t = since(t0);
  const bool rounds = std::fabs(th.bps - 6.12) < 0.005;
  const bool ok = rounds && std::fabs(th.bps - kReportedBps) <= kThroughputTol && th.bpm == 60.0 * th.bps && t < kLimit2;
  return {ok, fmt("%.4f bps vs reported %.2f (tol %.2f), bpm %.3f = 60 x bps", th.bps, kReportedBps, kThroughputTol, th.bpm)};
}

Outcome c3() {
  DofCounts c;
  c.tp = 946;
  c.fn = 54;
  c.tn = 999;
  c.fp = 1;
  const auto m = balanced_accuracy(c);
  const bool ok = std::fabs(m.tpr - 0.946) <= kBalAccTol && std::fabs(m.tnr - 0.999) <= kBalAccTol &&
                  std::fabs(m.bal_acc - 0.9725) <= kBalAccTol && std::fabs(m.pred_error - 0.0275) <= kBalAccTol;
  return {ok, fmt("TPR %.3f TNR %.3f -> bal_acc %.15f", m.tpr, m.tnr, m.bal_acc)};
}

Outcome c4() {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(2024);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  const FeatureThresholds thr;
  double worst = 0;
  std::vector<double> x(500);
  for (int w = 0; w < 1000; ++w) {
    for (double& v : x) v = u(rng);
    const auto got = extract_features(x, thr);
    const auto want = oracle::features(x, thr);
    for (std::size_t k = 0; k < kFeatureCount; ++k) {
      const double err = std::fabs(got[k] - want[k]);
      const double rel = want[k] == 0 ? (err == 0 ? 0 : INFINITY) : err / std::fabs(want[k]);
      worst = std::max(worst, rel);
    }
  }
  const double t = since(t0);
  return {worst <= kFeatureRelTol && t < kLimit4,
          fmt("1000 windows x 14 features, worst relative error %.2e (tol %.0e), %.2f s", worst, kFeatureRelTol, t)};
}

double batch_loss(std::span<const TensorView> xs, std::span<const GestureLabel> ys, const ModelParams& p) {
  const auto probs = forward_batch(xs, p, Mode::Train);
  double s = 0;
  for (std::size_t i = 0; i < xs.size(); ++i) s += loss(probs[i], ys[i]);
  return s / static_cast<double>(xs.size());
}

Outcome c5() {
  const auto t0 = Clock::now();
  const ModelConfig c = ModelConfig::tiny();
  ModelParams p(c);
  std::mt19937_64 rng(5);
  p.init_uniform(rng);
  std::uniform_real_distribution<double> u(-0.3, 0.3);
  for (auto* t : {&p.conv_b, &p.bn_beta, &p.gru_b, &p.fc1_b, &p.fc2_b, &p.bn_mean})
    for (auto& v : t->values) v = u(rng);
  for (auto& v : p.bn_gamma.values) v = 1.0 + u(rng);
  for (auto& v : p.bn_var.values) v = 1.0 + u(rng);

  std::normal_distribution<double> g;
  std::vector<std::vector<double>> data(4, std::vector<double>(c.input_rows * c.steps));
  std::vector<TensorView> xs;
  for (auto& d : data) {
    for (double& v : d) v = g(rng);
    xs.push_back({d.data(), c.input_rows, c.steps});
  }
  std::vector<GestureLabel> ys;
  for (const char* s : {"100000", "011000", "000001", "111110"}) ys.push_back(GestureLabel::parse(s));

  ModelParams grads(c);
  backward(xs, ys, p, grads);
  constexpr double h = 1e-5;
  auto pt = p.trainable();
  auto gt = grads.trainable();
  double worst = 0;
  std::size_t count = 0;
  for (std::size_t t = 0; t < pt.size(); ++t) {
    for (std::size_t i = 0; i < pt[t]->size(); ++i) {
      double& w = pt[t]->values[i];
      const double saved = w;
      w = saved + h;
      const double lp = batch_loss(xs, ys, p);
      w = saved - h;
      const double lm = batch_loss(xs, ys, p);
      w = saved;
      const double num = (lp - lm) / (2 * h);
      const double ana = gt[t]->values[i];
      worst = std::max(worst, std::fabs(num - ana) / std::max({std::fabs(num), std::fabs(ana), 1e-6}));
      ++count;
    }
  }
  const double t = since(t0);
  return {worst < kGradRelTol && t < kLimit5,
          fmt("%zu parameters, worst relative error %.2e (tol %.0e), %.1f s", count, worst, kGradRelTol, t)};
}

bool same_files(const fs::path& a, const fs::path& b) {
  std::size_t n = 0;
  for (const auto& e : fs::directory_iterator(a)) {
    if (read_file_bytes(e.path().string()) != read_file_bytes((b / e.path().filename()).string())) return false;
    ++n;
  }
  return n > 0 && n == static_cast<std::size_t>(std::distance(fs::directory_iterator(b), fs::directory_iterator{}));
}

Outcome c6() {
  const auto prof = SubjectProfile::ulnar8();
  SessionSpec spec;
  spec.gestures = {GestureLabel::parse("000110"), GestureLabel::parse("000010")};
  spec.repetitions = 2;
  spec.hold_s = 1.0;
  spec.rest_s = 1.0;
  const auto da = scratch("ds_a"), db = scratch("ds_b");
  generate_session(prof, spec, 77, da);
  generate_session(prof, spec, 77, db);
  const bool datasets = same_files(da, db);

  auto checkpoint_bytes = [&] {
    const auto s1 = extract_stream(Dataset::open(da), kFrontEnd);
    const auto s2 = extract_stream(prof, plan_session(spec, 78), kFrontEnd);
    auto r = TrainingRecipe::benchmark(s1.columns.rows());
    r.train.max_epochs = 1;
    r.train.seeds = {1, 2};
    r.train_examples.stride = 4;
    const LabeledStream* train[] = {&s1};
    return save_checkpoint(train_checkpoint(train, s2, kFrontEnd, r).checkpoint);
  };
  const auto ck1 = checkpoint_bytes(), ck2 = checkpoint_bytes();
  const bool checkpoints = ck1 == ck2;

  const auto ck = load_checkpoint(ck1);
  SimulatedSubject subj;
  subj.profile = prof;
  MatchingTaskConfig task;
  task.trials = 12;
  task.cutoff_s = 1.5;
  auto log = [&] {
    std::ostringstream out;
    const auto res = run_matching_session(ck, subj, task, 99);
    write_trial_log(out, res);
    return out.str();
  };
  const auto l1 = log(), l2 = log();
  const bool logs = l1 == l2 && !l1.empty();
  fs::remove_all(da);
  fs::remove_all(db);
  return {datasets && checkpoints && logs,
          fmt("datasets %s, checkpoints %s (%zu bytes), trial logs %s", datasets ? "identical" : "DIFFER",
              checkpoints ? "identical" : "DIFFER", ck1.size(), logs ? "identical" : "DIFFER")};
}

Outcome c7() {
  const auto& m = benchmark_model();
  const double acc = mean_balanced_accuracy(m.outcome.validation);
  std::string seeds;
  for (const auto& c : m.outcome.result.candidates) seeds += fmt(" %.1f", 100 * c.validation_score);
  return {acc > kBenchmarkBalAcc && m.seconds < kLimit7,
          fmt("held-out mean bal acc %.2f%% (> %.0f%%), seeds%s, %.0f s", 100 * acc, 100 * kBenchmarkBalAcc,
              seeds.c_str(), m.seconds)};
}

Outcome c8() {
  const auto t0 = Clock::now();
  MatchingTaskConfig task;
  SessionSpec spec;
  spec.gestures = task.shown_targets();
  const auto prof = SubjectProfile::benchmark16();
  progress("training the matching-task model");
  const auto a = extract_stream(prof, plan_session(spec, 11), kFrontEnd);
  const auto b = extract_stream(prof, plan_session(spec, 12), kFrontEnd);
  auto recipe = TrainingRecipe::benchmark(a.columns.rows());
  recipe.train.seeds = {1};
  const LabeledStream* train[] = {&a};
  const auto ck = train_checkpoint(train, b, kFrontEnd, recipe).checkpoint;

  progress("running 200 matching trials");
  const SimulatedSubject subject;
  const auto res = run_matching_session(ck, subject, task, 2024);
  const auto rep = matching_report(res, task);
  const auto expect = information_throughput(rep.stats.success_rate, rep.info_bits, rep.stats.median_rt_s);
  const bool consistent = rep.throughput.bps == expect.bps && rep.throughput.bpm == 60.0 * rep.throughput.bps &&
                          std::fabs(rep.info_bits - 5.0) <= kInfoTol;
  const double t = since(t0);
  const bool ok = rep.stats.trials == 200 && rep.stats.success_rate >= kMatchSuccess && rep.stats.median_defined &&
                  rep.stats.median_rt_s >= kMatchRtLo && rep.stats.median_rt_s <= kMatchRtHi && consistent &&
                  t < kLimit8;
  return {ok, fmt("success %.1f%% (>= %.0f%%), median RT %.2f s (in [%.1f, %.1f]), %.2f bps %s, %.0f s",
                  100 * rep.stats.success_rate, 100 * kMatchSuccess, rep.stats.median_rt_s, kMatchRtLo, kMatchRtHi,
                  rep.throughput.bps, consistent ? "consistent" : "INCONSISTENT", t)};
}

Recording concat(const SubjectProfile& prof, const std::vector<SegmentPlan>& plan, std::size_t segments) {
  Recording out = generate_segment(plan[0], prof).recording;
  for (std::size_t i = 1; i < segments && i < plan.size(); ++i) {
    const auto r = generate_segment(plan[i], prof).recording;
    for (std::size_t c = 0; c < out.samples.size(); ++c)
      out.samples[c].insert(out.samples[c].end(), r.samples[c].begin(), r.samples[c].end());
  }
  return out;
}

Outcome c9() {
  const auto t0 = Clock::now();
  const auto& a = benchmark_session(1);
  const auto& b = benchmark_session(2);
  const auto probe = concat(SubjectProfile::benchmark16(), plan_session(benchmark_spec(), 3), 10);
  auto recipe = TrainingRecipe::benchmark(a.columns.rows());
  const std::vector<double> lengths = {0.2, 0.5, 1.0, 2.0};
  progress("input-length sweep (one model per length)");
  const auto pts = sweep_input_length(a, b, b, probe, kFrontEnd, recipe, lengths, 10.0, 2);
  std::ostringstream table;
  print_length_table(table, pts);
  std::cerr << table.str();
  double lo = INFINITY, hi = 0;
  for (const auto& p : pts) {
    lo = std::min(lo, p.decode_us.p50);
    hi = std::max(hi, p.decode_us.p50);
  }
  const double ratio = hi / lo;
  const bool trend = pts[2].mean_error <= pts[0].mean_error;
  return {trend && ratio < kLatencyRatio,
          fmt("error 0.2 s %.2f%%, 1.0 s %.2f%% (%s); decode p50 %.0f..%.0f us, ratio %.2f (< %.1f %s), %.0f s",
              100 * pts[0].mean_error, 100 * pts[2].mean_error, trend ? "ok" : "WORSE", lo, hi, ratio, kLatencyRatio,
              ratio < kLatencyRatio ? "ok" : "EXCEEDED", since(t0))};
}

Outcome c10() {
  const auto& model = benchmark_model();
  const auto t0 = Clock::now();
  const auto prof = SubjectProfile::benchmark16();
  const auto spec = benchmark_spec();
  const DriftSpec drift{0.012, 0.002, -0.05};
  const auto& train = benchmark_session(1);
  std::vector<double> errors;
  std::string sweep;
  for (int day : {0, 10, 20, 40, 70}) {
    progress(fmt("drift day %d", day));
    const auto eval = extract_stream(apply_drift(prof, drift, day), plan_session(spec, 3), kFrontEnd);
    errors.push_back(mean_prediction_error(cross_session_eval(model.outcome.checkpoint, train, eval, 2)));
    sweep += fmt(" %d:%.2f", day, 100 * errors.back());
  }
  bool monotone = true;
  for (std::size_t i = 1; i < errors.size(); ++i) monotone = monotone && errors[i] > errors[i - 1];

  progress("retraining on the drifted session");
  const auto drifted = apply_drift(prof, drift, 70);
  const auto d_train = extract_stream(drifted, plan_session(spec, 4), kFrontEnd);
  const auto d_val = extract_stream(drifted, plan_session(spec, 5), kFrontEnd);
  const auto d_eval = extract_stream(drifted, plan_session(spec, 3), kFrontEnd);
  const auto re = retrain_and_eval(d_train, d_val, d_eval, kFrontEnd, TrainingRecipe::benchmark(train.columns.rows()), 2);
  const double retrained = mean_prediction_error(re.metrics);
  const bool recovered = retrained - errors.front() <= kRetrainPp;
  const double t = since(t0);
  return {monotone && recovered && t < kLimit10,
          fmt("error %%:%s (%s); retrained %.2f%% vs baseline %.2f%% (within %.0f pp %s), %.0f s", sweep.c_str(),
              monotone ? "increasing" : "NOT MONOTONE", 100 * retrained, 100 * errors.front(), 100 * kRetrainPp,
              recovered ? "ok" : "FAILED", t)};
}

Outcome c11() {
  const Checkpoint& ck = benchmark_model().outcome.checkpoint;

  const auto file = scratch("pipe").string() + ".nrd";
  write_nrd1(file, concat(SubjectProfile::benchmark16(), plan_session(benchmark_spec(), 6), 8));
  const Recording rec = read_nrd1(file);
  fs::remove(file);

  EngineConfig cfg;
  RecordingSource s1({rec});
  const auto offline = run_pipeline(s1, ck, cfg, RunMode::Batch);
  cfg.realtime_speed = 20.0;
  RecordingSource s2({rec});
  const auto realtime = run_pipeline(s2, ck, cfg, RunMode::RealTime);

  Server server(ck, cfg);
  server.bind(Endpoint::parse("127.0.0.1:0"));
  std::thread th([&] { server.run(); });
  RecordingSource s3({rec});
  StreamResult served;
  try {
    served = stream_source({"127.0.0.1", server.port()}, s3, 500);
  } catch (...) {
    server.stop();
    th.join();
    throw;
  }
  server.stop();
  th.join();

  bool rt_same = realtime.predictions.size() == offline.predictions.size() && realtime.latency.dropped_predictions == 0;
  for (std::size_t i = 0; rt_same && i < offline.predictions.size(); ++i)
    rt_same = realtime.predictions[i].probabilities == offline.predictions[i].probabilities &&
              realtime.predictions[i].timestamp_us == offline.predictions[i].timestamp_us;
  bool lb_same = !served.error && served.predictions.size() == offline.predictions.size();
  for (std::size_t i = 0; lb_same && i < offline.predictions.size(); ++i)
    for (std::size_t d = 0; d < kDofCount; ++d)
      lb_same = lb_same && served.predictions[i].probabilities[d] == static_cast<float>(offline.predictions[i].probabilities[d]);
  std::set<std::uint8_t> masks;
  for (const auto& p : offline.predictions) masks.insert(p.label.mask());

  PredictionMsg m;
  m.timestamp_us = 1000000;
  m.probabilities = {1, 0, 0, 0, 0, 0};
  m.mask = 0x01;
  m.feature_us = 250;
  m.decode_us = 5000;
  std::ifstream in(ND_GOLDEN_DIR "/prediction_frame.bin", std::ios::binary);
  const std::vector<std::uint8_t> golden((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  const bool golden_ok = !golden.empty() && encode_frame(m) == golden;

  return {rt_same && lb_same && golden_ok && !offline.predictions.empty(),
          fmt("%zu frames (%zu distinct labels): real-time %s, loopback %s (f32 wire), golden frame %s",
              offline.predictions.size(), masks.size(), rt_same ? "identical" : "DIFFERS",
              lb_same ? "identical" : "DIFFERS", golden_ok ? "bit-exact" : "MISMATCH")};
}

Outcome c12() {
  Checkpoint ck;
  ck.params = fixtures::random_params(ModelConfig{}, 1);
  ck.norm = NormStats::identity(16 * kFeatureCount);
  SignalSynth s(SubjectProfile::benchmark16(), 1);
  std::vector<Recording> recs{s.render(kRest, 20000), s.render(GestureLabel::parse("111110"), 40000),
                              s.render(kRest, 20000), s.render(GestureLabel::parse("010000"), 40000)};
  RecordingSource src(recs);
  const auto r = run_pipeline(src, ck, EngineConfig{}, RunMode::Batch);
  const auto f = r.latency.feature(), d = r.latency.decode();
  const bool ok = f.p95 < kFeatureP95Us && d.p95 < kDecodeP95Us;
  return {ok, fmt("%zu frames, default model (%zu params): feature p95 %.0f us (< %.0f), decode p95 %.0f us (< %.0f); "
                  "%u hardware thread(s)",
                  r.latency.frames(), ck.params.config.parameter_count(), f.p95, kFeatureP95Us, d.p95, kDecodeP95Us,
                  std::thread::hardware_concurrency())};
}

struct Criterion {
  int id;
  const char* name;
  std::function<Outcome()> run;
};

}  // namespace

int main(int argc, char** argv) {
  std::set<int> only;
  for (int i = 1; i < argc; ++i) {
    const std::string a = argv[i];
    if (a == "--only" && i + 1 < argc) {
      std::stringstream ss(argv[++i]);
      std::string item;
      while (std::getline(ss, item, ',')) only.insert(std::stoi(item));
    } else {
      std::cerr << "usage: nd_acceptance [--only 1,2,...]\n";
      return 2;
    }
  }

  const std::vector<Criterion> all = {
      {1, "information per trial", c1},
      {2, "throughput consistency", c2},
      {3, "metrics exactness", c3},
      {4, "feature oracle equivalence", c4},
      {5, "gradient check", c5},
      {6, "determinism", c6},
      {7, "end-to-end synthetic benchmark", c7},
      {8, "matching-task benchmark", c8},
      {9, "input-length sweep", c9},
      {10, "drift and retraining", c10},
      {11, "pipeline equivalence", c11},
      {12, "latency budget", c12},
  };

  int failed = 0;
  for (const auto& c : all) {
    if (!only.empty() && !only.count(c.id)) continue;
    std::cerr << "criterion " << c.id << ": " << c.name << std::endl;
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failed += !o.pass;
    std::cout << (o.pass ? "PASS" : "FAIL") << "  " << c.id << ". " << c.name << ": " << o.detail << std::endl;
  }
  return failed == 0 ? 0 : 1;
}
