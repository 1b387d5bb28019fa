#include "nd/chronometry.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <iomanip>
#include <limits>
#include <numbers>
#include <random>
#include <thread>

#include "nd/engine.hpp"
#include "nd/error.hpp"
#include "nd/jsonio.hpp"
#include "nd/queue.hpp"

namespace nd {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();
constexpr std::size_t kBlockSamples = 100;
constexpr std::size_t kQueueBlocks = 16;

std::vector<std::string> label_strings(const std::vector<GestureLabel>& v) {
  std::vector<std::string> out;
  for (const auto& g : v) out.push_back(g.str());
  return out;
}

std::uint64_t tick_sample(std::uint64_t k, double raw_rate, double rate) {
  return static_cast<std::uint64_t>(std::ceil(static_cast<double>(k) * raw_rate / rate - 1e-9));
}

// Piecewise-constant gesture script relative to the start of the trial stream.
struct Script {
  std::size_t shown = 0;  // sample at which the target appears
  std::size_t onset = 0;
  std::size_t retry = 0;  // == onset when the subject starts right
  GestureLabel wrong, target;

  GestureLabel at(std::size_t s) const {
    if (s < onset) return kRest;
    return s < retry ? wrong : target;
  }
  std::size_t next_change(std::size_t s) const {
    if (s < onset) return onset;
    if (s < retry) return retry;
    return std::numeric_limits<std::size_t>::max();
  }
};

void producer(const SubjectProfile& profile, const Script& script, std::uint64_t seed, std::size_t total,
              BoundedQueue<std::vector<double>>& queue) {
  SignalSynth synth(profile, seed);
  const std::size_t ch = profile.channels;
  for (std::size_t pos = 0; pos < total;) {
    const std::size_t n = std::min(kBlockSamples, total - pos);
    std::vector<double> block(ch * n);
    for (std::size_t done = 0; done < n;) {
      const std::size_t s = pos + done;
      const std::size_t len = std::min(n - done, script.next_change(s) - s);
      synth.render(script.at(s), len, block.data() + done, n);
      done += len;
    }
    if (!queue.push(std::move(block))) return;
    pos += n;
  }
  queue.close();
}

TrialResult run_trial(const Checkpoint& model, const SimulatedSubject& subject, const MatchingTaskConfig& cfg,
                      const TrialPlan& plan) {
  const double raw_rate = model.frontend.raw_rate_hz;
  const double rate = cfg.prediction_rate_hz;
  const auto shown_tick = static_cast<std::uint64_t>(std::llround(cfg.pre_roll_s * rate));
  Script script;
  script.shown = tick_sample(shown_tick, raw_rate, rate);
  script.onset = script.shown + static_cast<std::size_t>(std::llround(plan.onset_s * raw_rate));
  script.retry = script.onset;
  script.target = plan.target;
  if (plan.wrong_start) {
    script.wrong = *plan.wrong_start;
    script.retry = script.onset + static_cast<std::size_t>(std::llround(subject.retry_s * raw_rate));
  }
  // Enough samples for the last tick inside the cutoff to fire.
  const std::size_t total = script.shown + static_cast<std::size_t>(std::ceil(cfg.cutoff_s * raw_rate)) + 1;

  TrialResult r;
  r.trial_id = plan.trial_id;
  r.target = plan.target;
  r.onset_s = plan.onset_s;
  r.wrong_start = plan.wrong_start.has_value();
  r.reaction_time_s = kNaN;
  r.per_dof_match_time_s.fill(kNaN);

  BoundedQueue<std::vector<double>> queue(kQueueBlocks);
  std::thread gen(producer, std::cref(subject.profile), std::cref(script), plan.synth_seed, total, std::ref(queue));

  StreamDecoder decoder(model, rate, subject.profile.channels);
  std::vector<Prediction> fresh;
  std::array<double, kDofCount> run_start;
  run_start.fill(kNaN);
  bool done = false;
  try {
    while (!done) {
      auto block = queue.pop();
      if (!block) break;
      const std::size_t n = block->size() / subject.profile.channels;
      fresh.clear();
      decoder.push(block->data(), n, n, fresh);
      for (const auto& p : fresh) {
        if (p.tick <= shown_tick) continue;
        const double t = static_cast<double>(tick_sample(p.tick, raw_rate, rate) - script.shown) / raw_rate;
        if (t > cfg.cutoff_s + 1e-9) {
          done = true;
          break;
        }
        r.trace.push_back({t, p.probabilities, p.label});
        r.feature_us += p.feature_us;
        r.decode_us += p.decode_us;
        for (std::size_t d = 0; d < kDofCount; ++d) {
          if (p.label.flexed(d) != plan.target.flexed(d)) run_start[d] = kNaN;
          else if (std::isnan(run_start[d])) run_start[d] = t;
        }
        if (p.label == plan.target) {
          r.success = true;
          r.reaction_time_s = t;
          done = true;
          break;
        }
      }
    }
  } catch (...) {
    queue.close();
    gen.join();
    throw;
  }
  queue.close();
  gen.join();

  r.per_dof_match_time_s = run_start;
  if (!r.trace.empty()) {
    r.feature_us /= static_cast<double>(r.trace.size());
    r.decode_us /= static_cast<double>(r.trace.size());
  }
  return r;
}

bool same_double(double a, double b) { return (std::isnan(a) && std::isnan(b)) || a == b; }

}  // namespace

std::vector<GestureLabel> MatchingTaskConfig::default_targets() {
  std::vector<GestureLabel> v;
  for (const char* s : {"000000", "100000", "010000", "001000", "000100", "000010", "111110", "110000", "000001"})
    v.push_back(GestureLabel::parse(s));
  return v;
}

void MatchingTaskConfig::validate() const {
  if (!(cutoff_s > 0)) throw ConfigError("cutoff must be positive");
  if (targets.empty()) throw ConfigError("target set is empty");
  if (std::find(targets.begin(), targets.end(), kRest) == targets.end())
    throw ConfigError("target set must include rest");
  if (shown_targets().empty()) throw ConfigError("target set needs a gesture besides rest");
  if (!(prediction_rate_hz >= 5 && prediction_rate_hz <= 50)) throw ConfigError("prediction rate must lie in [5, 50] Hz");
  if (trials == 0) throw ConfigError("trial count must be positive");
  if (!(pre_roll_s > 0)) throw ConfigError("pre-roll must be positive");
}

std::vector<GestureLabel> MatchingTaskConfig::shown_targets() const {
  std::vector<GestureLabel> out;
  for (const auto& g : targets)
    if (!g.is_rest() && std::find(out.begin(), out.end(), g) == out.end()) out.push_back(g);
  return out;
}

void to_json(nlohmann::json& j, const MatchingTaskConfig& c) {
  j = {{"targets", label_strings(c.targets)},
       {"cutoff_s", c.cutoff_s},
       {"prediction_rate_hz", c.prediction_rate_hz},
       {"trials", c.trials},
       {"pre_roll_s", c.pre_roll_s}};
}

void from_json(const nlohmann::json& j, MatchingTaskConfig& c) {
  require_keys(j, {"targets", "cutoff_s", "prediction_rate_hz", "trials", "pre_roll_s"}, "matching task");
  try {
    if (auto it = j.find("targets"); it != j.end()) {
      c.targets.clear();
      for (const auto& s : *it) c.targets.push_back(GestureLabel::parse(s.get<std::string>()));
    }
    read_key(j, "cutoff_s", c.cutoff_s);
    read_key(j, "prediction_rate_hz", c.prediction_rate_hz);
    read_key(j, "trials", c.trials);
    read_key(j, "pre_roll_s", c.pre_roll_s);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("matching task: ") + e.what());
  } catch (const DataError& e) {
    throw ConfigError(std::string("matching task: ") + e.what());
  }
}

void SimulatedSubject::validate() const {
  profile.validate();
  if (!(onset_median_s > 0)) throw ConfigError("onset median must be positive");
  if (!(onset_sigma_log >= 0)) throw ConfigError("onset spread must be non-negative");
  if (!(retry_s > 0)) throw ConfigError("retry delay must be positive");
  if (!(error_rate >= 0 && error_rate <= 1)) throw ConfigError("error rate must lie in [0, 1]");
}

void to_json(nlohmann::json& j, const SimulatedSubject& s) {
  j = {{"profile", s.profile},
       {"onset_median_s", s.onset_median_s},
       {"onset_sigma_log", s.onset_sigma_log},
       {"retry_s", s.retry_s},
       {"error_rate", s.error_rate}};
}

void from_json(const nlohmann::json& j, SimulatedSubject& s) {
  require_keys(j, {"profile", "onset_median_s", "onset_sigma_log", "retry_s", "error_rate"}, "subject");
  try {
    read_key(j, "profile", s.profile);
    read_key(j, "onset_median_s", s.onset_median_s);
    read_key(j, "onset_sigma_log", s.onset_sigma_log);
    read_key(j, "retry_s", s.retry_s);
    read_key(j, "error_rate", s.error_rate);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("subject: ") + e.what());
  }
}

std::vector<TrialPlan> plan_trials(const SimulatedSubject& subject, const MatchingTaskConfig& cfg, std::uint64_t seed) {
  subject.validate();
  cfg.validate();
  const auto shown = cfg.shown_targets();
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> pick(0, shown.size() - 1);
  std::normal_distribution<double> normal;
  std::uniform_real_distribution<double> unit;
  std::vector<TrialPlan> plans(cfg.trials);
  for (std::size_t i = 0; i < cfg.trials; ++i) {
    auto& p = plans[i];
    p.trial_id = i;
    p.target = shown[pick(rng)];
    p.onset_s = subject.onset_median_s * std::exp(subject.onset_sigma_log * normal(rng));
    if (unit(rng) < subject.error_rate && shown.size() > 1) {
      std::size_t w = pick(rng);
      while (shown[w] == p.target) w = pick(rng);
      p.wrong_start = shown[w];
    }
    p.synth_seed = rng();
  }
  return plans;
}

bool same_outcome(const TrialResult& a, const TrialResult& b) {
  if (a.trial_id != b.trial_id || a.target != b.target || a.success != b.success || a.wrong_start != b.wrong_start ||
      a.onset_s != b.onset_s || !same_double(a.reaction_time_s, b.reaction_time_s))
    return false;
  for (std::size_t d = 0; d < kDofCount; ++d)
    if (!same_double(a.per_dof_match_time_s[d], b.per_dof_match_time_s[d])) return false;
  if (a.trace.size() != b.trace.size()) return false;
  for (std::size_t i = 0; i < a.trace.size(); ++i)
    if (a.trace[i].t_s != b.trace[i].t_s || a.trace[i].probabilities != b.trace[i].probabilities ||
        a.trace[i].label != b.trace[i].label)
      return false;
  return true;
}

std::vector<TrialResult> run_matching_session(const Checkpoint& model, const SimulatedSubject& subject,
                                              const MatchingTaskConfig& cfg, std::uint64_t seed) {
  const auto plans = plan_trials(subject, cfg, seed);
  const std::size_t model_channels = model.params.config.input_rows / kFeatureCount;
  if (model_channels != subject.profile.channels)
    throw ConfigError("model expects " + std::to_string(model_channels) + " channels, subject has " +
                      std::to_string(subject.profile.channels));
  if (model.frontend.raw_rate_hz != kSynthRateHz) throw ConfigError("model front end rate differs from the subject's");
  std::vector<TrialResult> out;
  out.reserve(plans.size());
  for (const auto& p : plans) out.push_back(run_trial(model, subject, cfg, p));
  return out;
}

double median(std::vector<double> v) {
  if (v.empty()) return kNaN;
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

ReactionStats reaction_stats(std::span<const TrialResult> results) {
  if (results.empty()) throw DataError("no trials to summarize");
  ReactionStats s;
  std::vector<double> rts;
  std::vector<GestureLabel> gestures;
  for (const auto& r : results) {
    ++s.trials;
    if (r.success) {
      ++s.successes;
      rts.push_back(r.reaction_time_s);
    }
    if (std::find(gestures.begin(), gestures.end(), r.target) == gestures.end()) gestures.push_back(r.target);
  }
  s.success_rate = static_cast<double>(s.successes) / static_cast<double>(s.trials);
  s.median_defined = !rts.empty();
  s.median_rt_s = s.median_defined ? median(rts) : 0.0;

  std::sort(gestures.begin(), gestures.end());
  for (const auto& g : gestures) {
    GestureReaction gr;
    gr.gesture = g;
    std::vector<double> grt;
    for (const auto& r : results) {
      if (r.target != g) continue;
      ++gr.trials;
      if (r.success) {
        ++gr.successes;
        grt.push_back(r.reaction_time_s);
      }
    }
    gr.success_rate = static_cast<double>(gr.successes) / static_cast<double>(gr.trials);
    gr.median_defined = !grt.empty();
    gr.median_rt_s = gr.median_defined ? median(grt) : 0.0;
    s.per_gesture.push_back(gr);
  }
  return s;
}

MatchingReport matching_report(std::span<const TrialResult> results, const MatchingTaskConfig& cfg) {
  MatchingReport r;
  r.stats = reaction_stats(results);
  const auto shown = cfg.shown_targets();
  r.info_bits = info_per_trial(GestureDistribution::rest_half(shown), 2);
  if (r.stats.median_defined) r.throughput = information_throughput(r.stats.success_rate, r.info_bits, r.stats.median_rt_s);
  std::size_t n = 0;
  for (const auto& g : r.stats.per_gesture) {
    if (!g.median_defined) continue;
    const auto t = information_throughput(g.success_rate, r.info_bits, g.median_rt_s);
    r.per_gesture_throughput.bps += t.bps;
    ++n;
  }
  if (n > 0) r.per_gesture_throughput.bps /= static_cast<double>(n);
  r.per_gesture_throughput.bpm = 60.0 * r.per_gesture_throughput.bps;
  return r;
}

nlohmann::json MatchingReport::to_json() const {
  nlohmann::json per = nlohmann::json::array();
  for (const auto& g : stats.per_gesture)
    per.push_back({{"gesture", g.gesture.str()},
                   {"trials", g.trials},
                   {"successes", g.successes},
                   {"success_rate", g.success_rate},
                   {"median_rt_s", g.median_defined ? nlohmann::json(g.median_rt_s) : nlohmann::json(nullptr)}});
  return {{"trials", stats.trials},
          {"successes", stats.successes},
          {"success_rate", stats.success_rate},
          {"median_rt_s", stats.median_defined ? nlohmann::json(stats.median_rt_s) : nlohmann::json(nullptr)},
          {"info_bits", info_bits},
          {"throughput_bps", throughput.bps},
          {"throughput_bpm", throughput.bpm},
          {"per_gesture_throughput_bps", per_gesture_throughput.bps},
          {"per_gesture", per}};
}

void print_matching_table(std::ostream& out, const MatchingReport& r) {
  const auto flags = out.flags();
  out << std::left << std::setw(10) << "gesture" << std::right << std::setw(8) << "trials" << std::setw(12)
      << "success %" << std::setw(12) << "median RT" << std::setw(10) << "bps" << '\n';
  out << std::fixed;
  for (const auto& g : r.stats.per_gesture) {
    out << std::left << std::setw(10) << g.gesture.str() << std::right << std::setw(8) << g.trials << std::setw(12)
        << std::setprecision(1) << 100.0 * g.success_rate;
    if (g.median_defined)
      out << std::setw(11) << std::setprecision(2) << g.median_rt_s << 's' << std::setw(10) << std::setprecision(2)
          << information_throughput(g.success_rate, r.info_bits, g.median_rt_s).bps;
    else
      out << std::setw(12) << "-" << std::setw(10) << "-";
    out << '\n';
  }
  out << std::left << std::setw(10) << "all" << std::right << std::setw(8) << r.stats.trials << std::setw(12)
      << std::setprecision(1) << 100.0 * r.stats.success_rate;
  if (r.stats.median_defined)
    out << std::setw(11) << std::setprecision(2) << r.stats.median_rt_s << 's' << std::setw(10) << std::setprecision(2)
        << r.throughput.bps;
  else
    out << std::setw(12) << "-" << std::setw(10) << "-";
  out << '\n' << std::setprecision(2) << "information per trial " << r.info_bits << " bits, throughput "
      << r.throughput.bps << " bps (" << r.throughput.bpm << " bpm)\n";
  out.flags(flags);
}

void write_trial_log(std::ostream& out, std::span<const TrialResult> results) {
  using ojson = nlohmann::ordered_json;
  auto num = [](double v) { return std::isnan(v) ? ojson(nullptr) : ojson(v); };
  for (const auto& r : results) {
    ojson per_dof = ojson::array();
    for (double t : r.per_dof_match_time_s) per_dof.push_back(num(1000.0 * t));
    const double rt = r.success ? r.reaction_time_s : kNaN;
    ojson line;
    line["trial_id"] = r.trial_id;
    line["target"] = r.target.str();
    line["success"] = r.success;
    line["rt_s"] = num(rt);
    line["per_dof_ms"] = per_dof;
    line["latencies"]["onset_ms"] = 1000.0 * r.onset_s;
    line["latencies"]["wrong_start"] = r.wrong_start;
    line["latencies"]["decode_delay_ms"] = num(1000.0 * (rt - r.onset_s));
    out << line.dump() << '\n';
  }
}

double DensityCurve::integral() const {
  double s = 0;
  for (std::size_t i = 1; i < x.size(); ++i) s += 0.5 * (y[i] + y[i - 1]) * (x[i] - x[i - 1]);
  return s;
}

std::vector<double> DensityCurve::peaks(double min_fraction) const {
  std::vector<double> out;
  if (y.empty()) return out;
  const double top = *std::max_element(y.begin(), y.end());
  for (std::size_t i = 0; i < y.size(); ++i) {
    const bool left = i == 0 || y[i] > y[i - 1];
    const bool right = i + 1 == y.size() || y[i] >= y[i + 1];
    if (left && right && y[i] >= min_fraction * top) out.push_back(x[i]);
  }
  return out;
}

double silverman_bandwidth(std::span<const double> samples) {
  const std::size_t n = samples.size();
  if (n < 2) throw DataError("density estimate needs at least 2 samples");
  double mean = 0;
  for (double v : samples) mean += v;
  mean /= static_cast<double>(n);
  double ss = 0;
  for (double v : samples) ss += (v - mean) * (v - mean);
  const double sd = std::sqrt(ss / static_cast<double>(n - 1));

  std::vector<double> sorted(samples.begin(), samples.end());
  std::sort(sorted.begin(), sorted.end());
  auto quantile = [&](double q) {
    const double pos = q * static_cast<double>(n - 1);
    const auto lo = static_cast<std::size_t>(pos);
    const std::size_t hi = std::min(lo + 1, n - 1);
    return sorted[lo] + (pos - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
  };
  const double iqr = quantile(0.75) - quantile(0.25);
  double spread = sd;
  if (iqr > 0) spread = std::min(sd, iqr / 1.34);
  if (!(spread > 0)) throw DataError("density estimate needs samples with nonzero spread");
  return 0.9 * spread * std::pow(static_cast<double>(n), -0.2);
}

DensityCurve kde_density(std::span<const double> samples, double lo, double hi, std::size_t points,
                         std::optional<double> bandwidth) {
  if (samples.size() < 2) throw DataError("density estimate needs at least 2 samples");
  if (!(hi > lo) || points < 2) throw ConfigError("density grid needs hi > lo and at least 2 points");
  DensityCurve c;
  c.bandwidth = bandwidth ? *bandwidth : silverman_bandwidth(samples);
  if (!(c.bandwidth > 0)) throw ConfigError("bandwidth must be positive");
  const double norm = 1.0 / (static_cast<double>(samples.size()) * c.bandwidth * std::sqrt(2.0 * std::numbers::pi));
  c.x.resize(points);
  c.y.resize(points);
  for (std::size_t i = 0; i < points; ++i) {
    const double x = lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(points - 1);
    double s = 0;
    for (double v : samples) {
      const double z = (x - v) / c.bandwidth;
      s += std::exp(-0.5 * z * z);
    }
    c.x[i] = x;
    c.y[i] = s * norm;
  }
  return c;
}

void write_density(std::ostream& out, const DensityCurve& curve) {
  const auto flags = out.flags();
  const auto prec = out.precision();
  out << std::setprecision(9);
  for (std::size_t i = 0; i < curve.x.size(); ++i) out << curve.x[i] << ' ' << curve.y[i] << '\n';
  out.flags(flags);
  out.precision(prec);
}

std::array<DofMetrics, kDofCount> cross_session_eval(const Checkpoint& model, const LabeledStream& train_session,
                                                     const LabeledStream& eval_session, std::size_t stride) {
  if (train_session.channels != eval_session.channels || train_session.columns.rows() != eval_session.columns.rows())
    throw ConfigError("sessions differ in channel layout");
  return evaluate_stream(model, eval_session, stride);
}

RetrainResult retrain_and_eval(const LabeledStream& drifted_session, const LabeledStream& validation,
                               const LabeledStream& eval_session, const FrontEndConfig& frontend,
                               const TrainingRecipe& recipe, std::size_t stride) {
  const LabeledStream* train[] = {&drifted_session};
  RetrainResult r;
  r.model = train_checkpoint(train, validation, frontend, recipe).checkpoint;
  r.metrics = cross_session_eval(r.model, drifted_session, eval_session, stride);
  return r;
}

}  // namespace nd
