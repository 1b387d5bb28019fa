// neurodecode: command-line front end for dataset synthesis, training,
// evaluation, the matching task, input-length sweeps and the decoding server.

#include <atomic>
#include <chrono>
#include <csignal>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "nd/byteio.hpp"
#include "nd/checkpoint.hpp"
#include "nd/chronometry.hpp"
#include "nd/corpus.hpp"
#include "nd/engine.hpp"
#include "nd/error.hpp"
#include "nd/jsonio.hpp"
#include "nd/server.hpp"
#include "nd/sweep.hpp"
#include "nd/synthgen.hpp"

#ifndef ND_VERSION
#define ND_VERSION "0.0.0"
#endif

namespace fs = std::filesystem;
using nlohmann::json;
using namespace nd;

namespace {

std::atomic<Server*> g_server{nullptr};

void on_signal(int) {
  if (Server* s = g_server.load()) s->stop();
}

std::string utc_now() {
  const std::time_t t = std::time(nullptr);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&t));
  return buf;
}

std::string hash_of(const json& j) {
  const std::string s = j.dump();
  char buf[16];
  std::snprintf(buf, sizeof buf, "%08x", crc32({reinterpret_cast<const std::uint8_t*>(s.data()), s.size()}));
  return buf;
}

// One record per run, written next to the primary output as <output>.run.json.
class RunManifest {
 public:
  explicit RunManifest(std::string command) : command_(std::move(command)), start_(std::chrono::steady_clock::now()) {
    started_ = utc_now();
  }

  void config(const json& c) { config_ = c; }
  void seeds(std::vector<std::uint64_t> s) { seeds_ = std::move(s); }
  void input(const fs::path& p) { inputs_.push_back(p.string()); }
  void output(const fs::path& p) { outputs_.push_back(p.string()); }

  void write(const fs::path& primary) const {
    const double elapsed = std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    json j = {{"command", command_},
              {"config", config_},
              {"config_hash", hash_of(config_)},
              {"seeds", seeds_},
              {"inputs", inputs_},
              {"outputs", outputs_},
              {"tool_version", ND_VERSION},
              {"started_utc", started_},
              {"elapsed_s", elapsed}};
    fs::path p = primary;
    p += ".run.json";
    std::ofstream out(p);
    if (!out) throw Error("cannot write " + p.string());
    out << j.dump(2) << '\n';
  }

 private:
  std::string command_;
  std::chrono::steady_clock::time_point start_;
  std::string started_;
  json config_ = json::object();
  std::vector<std::uint64_t> seeds_;
  std::vector<std::string> inputs_, outputs_;
};

struct Workspace {
  std::string root = ".";
  fs::path operator()(const std::string& p) const {
    const fs::path path(p);
    return path.is_absolute() ? path : fs::path(root) / path;
  }
};

std::vector<std::uint64_t> parse_seeds(const std::string& text) {
  std::vector<std::uint64_t> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      out.push_back(std::stoull(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw ConfigError("invalid seed '" + item + "'");
    }
  }
  if (out.empty()) throw ConfigError("empty seed list");
  return out;
}

std::vector<GestureLabel> parse_gestures(const std::string& text) {
  std::vector<GestureLabel> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      out.push_back(GestureLabel::parse(item));
    } catch (const DataError& e) {
      throw ConfigError(e.what());
    }
  }
  return out;
}

SubjectProfile load_profile(const Workspace& ws, const std::string& name) {
  if (name == "benchmark16") return SubjectProfile::benchmark16();
  if (name == "ulnar8") return SubjectProfile::ulnar8();
  try {
    return read_json_file(ws(name)).get<SubjectProfile>();
  } catch (const json::exception& e) {
    throw ConfigError("profile " + name + ": " + e.what());
  }
}

template <typename T>
T load_json_as(const fs::path& path, const char* what) {
  try {
    return read_json_file(path).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string(what) + " " + path.string() + ": " + e.what());
  } catch (const DataError& e) {
    throw ConfigError(std::string(what) + " " + path.string() + ": " + e.what());
  }
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << text;
}

json metrics_json(const std::array<DofMetrics, kDofCount>& m) {
  json dofs = json::array();
  for (std::size_t d = 0; d < kDofCount; ++d)
    dofs.push_back({{"dof", kDofNames[d]},
                    {"defined", m[d].defined},
                    {"tpr", m[d].tpr},
                    {"tnr", m[d].tnr},
                    {"bal_acc", m[d].bal_acc},
                    {"pred_error", m[d].pred_error}});
  return {{"dofs", dofs},
          {"mean_bal_acc", mean_balanced_accuracy(m)},
          {"mean_pred_error", mean_prediction_error(m)}};
}

// --- synth ---

struct SynthArgs {
  std::string out, profile = "benchmark16", spec, gestures, drift;
  std::size_t reps = 0;
  double hold_s = 0, rest_s = 0;
  int days = 0;
  std::uint64_t seed = 1;
  bool force = false;
};

int cmd_synth(const Workspace& ws, const SynthArgs& a) {
  RunManifest run("synth");
  SubjectProfile profile = load_profile(ws, a.profile);
  SessionSpec spec;
  spec.gestures = SessionSpec::benchmark_gestures();
  if (!a.spec.empty()) spec = load_json_as<SessionSpec>(ws(a.spec), "session spec");
  if (!a.gestures.empty()) spec.gestures = parse_gestures(a.gestures);
  if (a.reps > 0) spec.repetitions = a.reps;
  if (a.hold_s > 0) spec.hold_s = a.hold_s;
  if (a.rest_s > 0) spec.rest_s = a.rest_s;
  json drift_json = nullptr;
  if (!a.drift.empty()) {
    const auto drift = load_json_as<DriftSpec>(ws(a.drift), "drift");
    profile = apply_drift(profile, drift, a.days);
    spec.day_index = a.days;
    drift_json = drift;
  }
  spec.validate();
  const fs::path out = ws(a.out);
  const auto m = generate_session(profile, spec, a.seed, out, a.force);
  std::cout << "wrote " << m.segments.size() << " segments (" << m.active_segments() << " active, "
            << static_cast<double>(m.total_samples()) / m.sample_rate_hz << " s) to " << out.string() << '\n';

  run.config({{"profile", profile}, {"spec", spec}, {"drift", drift_json}, {"days", a.days}});
  run.seeds({a.seed});
  run.output(out);
  run.write(out);
  return 0;
}

// --- train ---

struct TrainArgs {
  std::vector<std::string> data;
  std::string out, config, seeds, preset = "benchmark";
  double split = 0;
};

json recipe_json(const TrainingRecipe& r) {
  return {{"model", r.model},
          {"train", r.train},
          {"train_stride", r.train_examples.stride},
          {"validation_stride", r.validation_examples.stride}};
}

// Preset, then any keys of the config file's "model", "train", "train_stride"
// and "validation_stride" on top.
TrainingRecipe make_recipe(const Workspace& ws, const std::string& preset, const std::string& config_path,
                           std::size_t rows, FrontEndConfig& frontend) {
  TrainingRecipe r;
  if (preset == "benchmark") {
    r = TrainingRecipe::benchmark(rows);
  } else if (preset == "full") {
    r.model.input_rows = rows;
    r.train_examples.stride = 1;
    r.validation_examples.stride = 1;
  } else {
    throw ConfigError("unknown preset '" + preset + "' (benchmark or full)");
  }
  if (!config_path.empty()) {
    const json j = read_json_file(ws(config_path));
    require_keys(j, {"model", "train", "train_stride", "validation_stride", "frontend"}, "train config");
    try {
      if (j.contains("model")) {
        json merged = r.model;
        merged.update(j["model"]);
        r.model = merged.get<ModelConfig>();
      }
      if (j.contains("train")) {
        json merged = r.train;
        merged.update(j["train"]);
        r.train = merged.get<TrainConfig>();
      }
      if (j.contains("frontend")) {
        json merged = frontend;
        merged.update(j["frontend"]);
        frontend = merged.get<FrontEndConfig>();
      }
      read_key(j, "train_stride", r.train_examples.stride);
      read_key(j, "validation_stride", r.validation_examples.stride);
    } catch (const json::exception& e) {
      throw ConfigError(std::string("train config: ") + e.what());
    }
  }
  r.model.input_rows = rows;
  r.model.steps = frontend.window.steps();
  r.train_examples.steps = r.model.steps;
  r.validation_examples.steps = r.model.steps;
  r.model.validate();
  r.train.validate();
  return r;
}

std::vector<LabeledStream> load_streams(const Workspace& ws, const std::vector<std::string>& dirs,
                                        const FrontEndConfig& fe, RunManifest& run) {
  std::vector<LabeledStream> out;
  for (const auto& d : dirs) {
    const auto ds = Dataset::open(ws(d));
    run.input(ws(d));
    out.push_back(extract_stream(ds, fe));
    if (out.back().channels != out.front().channels)
      throw ConfigError("session " + d + " has " + std::to_string(out.back().channels) + " channels, expected " +
                        std::to_string(out.front().channels));
  }
  return out;
}

int cmd_train(const Workspace& ws, const TrainArgs& a) {
  RunManifest run("train");
  if (a.data.size() < 2 && a.split <= 0) throw ConfigError("train needs at least two sessions or --split");
  if (a.data.size() >= 2 && a.split > 0) throw ConfigError("--split applies to a single session");
  FrontEndConfig fe;
  // The preset needs the row count, which needs the channel count; read the
  // first manifest before extracting features.
  const auto first = Dataset::open(ws(a.data.front()));
  const std::size_t rows = first.manifest().profile.channels * kFeatureCount;
  TrainingRecipe recipe = make_recipe(ws, a.preset, a.config, rows, fe);
  if (!a.seeds.empty()) recipe.train.seeds = parse_seeds(a.seeds);
  fe.validate();

  auto streams = load_streams(ws, a.data, fe, run);
  std::vector<const LabeledStream*> train;
  LabeledStream validation;
  std::pair<LabeledStream, LabeledStream> parts;
  if (a.split > 0) {
    parts = split_stream(streams.front(), a.split, recipe.model.steps);
    train.push_back(&parts.first);
    validation = std::move(parts.second);
  } else {
    for (std::size_t i = 0; i + 1 < streams.size(); ++i) train.push_back(&streams[i]);
    validation = std::move(streams.back());
  }

  std::cout << "training " << recipe.model.parameter_count() << " parameters on " << train.size()
            << " session(s), seeds";
  for (auto s : recipe.train.seeds) std::cout << ' ' << s;
  std::cout << '\n';
  const auto outcome = train_checkpoint(train, validation, fe, recipe);
  for (const auto& c : outcome.result.candidates)
    std::cout << "  seed " << c.seed << ": validation mean balanced accuracy " << 100 * c.validation_score << " %\n";
  std::cout << "selected seed " << outcome.checkpoint.meta.seed << "\n\n";
  print_metrics_table(std::cout, outcome.validation);

  const fs::path out = ws(a.out);
  write_checkpoint(out.string(), outcome.checkpoint);
  json report = {{"selected_seed", outcome.checkpoint.meta.seed},
                 {"candidates", json::array()},
                 {"validation", metrics_json(outcome.validation)}};
  for (const auto& c : outcome.result.candidates)
    report["candidates"].push_back(
        {{"seed", c.seed}, {"validation_score", c.validation_score}, {"epoch_loss", c.history.epoch_loss}});
  fs::path report_path = out;
  report_path += ".report.json";
  write_text(report_path, report.dump(2) + "\n");

  json cfg = recipe_json(recipe);
  cfg["frontend"] = fe;
  cfg["split"] = a.split;
  run.config(cfg);
  run.seeds(recipe.train.seeds);
  run.output(out);
  run.output(report_path);
  run.write(out);
  return 0;
}

// --- eval ---

struct EvalArgs {
  std::string model, data, out;
  std::size_t stride = 1;
};

int cmd_eval(const Workspace& ws, const EvalArgs& a) {
  RunManifest run("eval");
  const auto ck = read_checkpoint(ws(a.model).string());
  run.input(ws(a.model));
  const auto ds = Dataset::open(ws(a.data));
  run.input(ws(a.data));
  const auto stream = extract_stream(ds, ck.frontend);
  const auto m = evaluate_stream(ck, stream, a.stride);
  print_metrics_table(std::cout, m);
  const fs::path out = ws(a.out.empty() ? a.data + ".eval.json" : a.out);
  write_text(out, metrics_json(m).dump(2) + "\n");
  run.config({{"stride", a.stride}});
  run.output(out);
  run.write(out);
  return 0;
}

// --- match ---

struct MatchArgs {
  std::string model, out, subject, task, profile;
  std::size_t trials = 0;
  double cutoff = 0;
  std::uint64_t seed = 1;
};

int cmd_match(const Workspace& ws, const MatchArgs& a) {
  RunManifest run("match");
  const auto ck = read_checkpoint(ws(a.model).string());
  run.input(ws(a.model));
  SimulatedSubject subject;
  if (!a.subject.empty()) subject = load_json_as<SimulatedSubject>(ws(a.subject), "subject");
  if (!a.profile.empty()) subject.profile = load_profile(ws, a.profile);
  MatchingTaskConfig task;
  if (!a.task.empty()) task = load_json_as<MatchingTaskConfig>(ws(a.task), "matching task");
  if (a.trials > 0) task.trials = a.trials;
  if (a.cutoff > 0) task.cutoff_s = a.cutoff;
  task.validate();

  const auto results = run_matching_session(ck, subject, task, a.seed);
  const auto report = matching_report(results, task);
  print_matching_table(std::cout, report);

  const fs::path dir = ws(a.out);
  fs::create_directories(dir);
  {
    std::ofstream log(dir / "trials.jsonl");
    write_trial_log(log, results);
  }
  write_text(dir / "report.json", report.to_json().dump(2) + "\n");
  std::vector<double> rts;
  for (const auto& r : results)
    if (r.success) rts.push_back(r.reaction_time_s);
  if (rts.size() >= 2) {
    try {
      std::ofstream curve(dir / "rt_density.txt");
      write_density(curve, kde_density(rts, 0.0, task.cutoff_s));
      run.output(dir / "rt_density.txt");
    } catch (const DataError& e) {
      std::cerr << "no density curve: " << e.what() << '\n';
    }
  }
  LatencyReport lat;
  for (const auto& r : results) {
    Prediction p;
    p.feature_us = r.feature_us;
    p.decode_us = r.decode_us;
    p.end_to_end_us = r.feature_us + r.decode_us;
    if (!r.trace.empty()) lat.add(p);
  }
  write_text(dir / "latency.json", lat.to_json().dump(2) + "\n");

  run.config({{"subject", subject}, {"task", task}});
  run.seeds({a.seed});
  for (const char* f : {"trials.jsonl", "report.json", "latency.json"}) run.output(dir / f);
  run.write(dir / "match");
  return 0;
}

// --- sweep ---

struct SweepArgs {
  std::vector<std::string> data;
  std::string out, lengths = "0.2,0.5,1.0,2.0", seeds, preset = "benchmark", config;
  double probe_s = 20.0;
  std::size_t stride = 2;
};

int cmd_sweep(const Workspace& ws, const SweepArgs& a) {
  RunManifest run("sweep");
  if (a.data.size() < 2) throw ConfigError("sweep needs a training and a validation session");
  std::vector<double> lengths;
  {
    std::stringstream ss(a.lengths);
    std::string item;
    while (std::getline(ss, item, ',')) {
      try {
        lengths.push_back(std::stod(item));
      } catch (const std::exception&) {
        throw ConfigError("invalid length '" + item + "'");
      }
    }
  }
  FrontEndConfig fe;
  const auto first = Dataset::open(ws(a.data.front()));
  const std::size_t rows = first.manifest().profile.channels * kFeatureCount;
  TrainingRecipe recipe = make_recipe(ws, a.preset, a.config, rows, fe);
  if (!a.seeds.empty()) recipe.train.seeds = parse_seeds(a.seeds);

  auto streams = load_streams(ws, a.data, fe, run);
  const auto validation = Dataset::open(ws(a.data.back()));
  DatasetSource src(validation);
  const auto want = static_cast<std::size_t>(a.probe_s * src.sample_rate_hz());
  Recording probe = Recording::zeros(src.sample_rate_hz(), src.channels(), want);
  std::vector<double> buf(src.channels() * want);
  std::size_t got = 0;
  while (got < want) {
    const std::size_t n = src.read(buf.data() + got, want - got, want);
    if (n == 0) break;
    got += n;
  }
  for (std::size_t c = 0; c < src.channels(); ++c)
    probe.samples[c].assign(buf.begin() + static_cast<std::ptrdiff_t>(c * want),
                            buf.begin() + static_cast<std::ptrdiff_t>(c * want + got));

  const auto& train = streams.front();
  const auto& val = streams.back();
  const auto points = sweep_input_length(train, val, val, probe, fe, recipe, lengths, 10.0, a.stride);
  print_length_table(std::cout, points);

  const fs::path out = ws(a.out);
  write_text(out, to_json(std::span<const LengthSweepPoint>(points)).dump(2) + "\n");
  json cfg = recipe_json(recipe);
  cfg["lengths_s"] = lengths;
  cfg["probe_s"] = a.probe_s;
  cfg["eval_stride"] = a.stride;
  run.config(cfg);
  run.seeds(recipe.train.seeds);
  run.output(out);
  run.write(out);
  return 0;
}

// --- serve ---

struct ServeArgs {
  std::string model, config, endpoint;
};

int cmd_serve(const Workspace& ws, const ServeArgs& a) {
  EngineConfig cfg;
  if (!a.config.empty()) cfg = EngineConfig::load(ws(a.config));
  if (!a.model.empty()) cfg.model_path = a.model;
  if (!a.endpoint.empty()) cfg.endpoint = a.endpoint;
  if (cfg.model_path.empty()) throw ConfigError("no model given (--model or the config's \"model\")");
  const auto ck = read_checkpoint(ws(cfg.model_path).string());
  const auto ep = Endpoint::parse(cfg.endpoint);
  Server server(ck, cfg);
  server.bind(ep);
  g_server.store(&server);
  std::signal(SIGINT, on_signal);
  std::signal(SIGTERM, on_signal);
  std::cout << "listening on " << ep.host << ':' << server.port() << std::endl;
  server.run();
  g_server.store(nullptr);
  const auto st = server.stats();
  std::cout << "stopped after " << st.sessions << " session(s), " << st.rejected_sessions << " rejected, "
            << st.dropped_predictions << " dropped predictions\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Peripheral-nerve gesture decoding toolkit"};
  app.set_version_flag("--version", ND_VERSION);
  app.require_subcommand(1);
  Workspace ws;
  app.add_option("--workspace", ws.root, "Root for relative paths")->check(CLI::ExistingDirectory);

  SynthArgs sa;
  auto* synth = app.add_subcommand("synth", "Generate a synthetic recording session");
  synth->add_option("--out", sa.out, "Output dataset directory")->required();
  synth->add_option("--profile", sa.profile, "benchmark16, ulnar8 or a profile JSON file");
  synth->add_option("--spec", sa.spec, "Session spec JSON");
  synth->add_option("--gestures", sa.gestures, "Comma-separated 6-bit gestures");
  synth->add_option("--reps", sa.reps, "Repetitions per gesture");
  synth->add_option("--hold", sa.hold_s, "Gesture hold, s");
  synth->add_option("--rest", sa.rest_s, "Rest between gestures, s");
  synth->add_option("--seed", sa.seed, "Session seed");
  synth->add_option("--drift", sa.drift, "Drift spec JSON");
  synth->add_option("--days", sa.days, "Days of drift to apply");
  synth->add_flag("--force", sa.force, "Overwrite a non-empty directory");

  TrainArgs ta;
  auto* train = app.add_subcommand("train", "Train a decoder; the last session validates");
  train->add_option("--data", ta.data, "Dataset directories")->required();
  train->add_option("--out", ta.out, "Checkpoint path")->required();
  train->add_option("--split", ta.split, "Validate on this trailing fraction of a single session");
  train->add_option("--config", ta.config, "Train config JSON (model, train, strides, frontend)");
  train->add_option("--seeds", ta.seeds, "Comma-separated seeds");
  train->add_option("--preset", ta.preset, "benchmark or full");

  EvalArgs ea;
  auto* eval = app.add_subcommand("eval", "Score a checkpoint on a session");
  eval->add_option("--model", ea.model, "Checkpoint")->required();
  eval->add_option("--data", ea.data, "Dataset directory")->required();
  eval->add_option("--out", ea.out, "Metrics JSON (default <data>.eval.json)");
  eval->add_option("--stride", ea.stride, "Score every n-th column")->check(CLI::PositiveNumber);

  MatchArgs ma;
  auto* match = app.add_subcommand("match", "Run the gesture matching task with a simulated subject");
  match->add_option("--model", ma.model, "Checkpoint")->required();
  match->add_option("--out", ma.out, "Output directory")->required();
  match->add_option("--subject", ma.subject, "Simulated subject JSON");
  match->add_option("--profile", ma.profile, "Subject signal profile (name or JSON)");
  match->add_option("--task", ma.task, "Matching task JSON");
  match->add_option("--trials", ma.trials, "Trial count");
  match->add_option("--cutoff", ma.cutoff, "Cutoff, s");
  match->add_option("--seed", ma.seed, "Session seed");

  SweepArgs wa;
  auto* sweep = app.add_subcommand("sweep", "Accuracy and decode latency against decoder input length");
  sweep->add_option("--data", wa.data, "Training then validation dataset")->required();
  sweep->add_option("--out", wa.out, "Result JSON")->required();
  sweep->add_option("--lengths", wa.lengths, "Comma-separated input lengths, s");
  sweep->add_option("--seeds", wa.seeds, "Comma-separated seeds");
  sweep->add_option("--preset", wa.preset, "benchmark or full");
  sweep->add_option("--config", wa.config, "Train config JSON");
  sweep->add_option("--probe", wa.probe_s, "Seconds of signal streamed for latency");
  sweep->add_option("--stride", wa.stride, "Score every n-th column")->check(CLI::PositiveNumber);

  ServeArgs va;
  auto* serve = app.add_subcommand("serve", "Serve decoding over TCP until interrupted");
  serve->add_option("--model", va.model, "Checkpoint (overrides the config)");
  serve->add_option("--config", va.config, "Engine config JSON");
  serve->add_option("--endpoint", va.endpoint, "host:port (overrides the config)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*synth) return cmd_synth(ws, sa);
    if (*train) return cmd_train(ws, ta);
    if (*eval) return cmd_eval(ws, ea);
    if (*match) return cmd_match(ws, ma);
    if (*sweep) return cmd_sweep(ws, wa);
    if (*serve) return cmd_serve(ws, va);
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 2;
}
