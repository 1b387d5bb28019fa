#include "nd/sweep.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>

#include "nd/error.hpp"

namespace nd {

std::vector<LengthSweepPoint> sweep_input_length(const LabeledStream& train, const LabeledStream& validation,
                                                 const LabeledStream& eval, const Recording& probe,
                                                 const FrontEndConfig& frontend, const TrainingRecipe& recipe,
                                                 std::span<const double> lengths_s, double prediction_rate_hz,
                                                 std::size_t eval_stride) {
  if (lengths_s.empty()) throw ConfigError("no input lengths to sweep");
  if (eval_stride == 0) throw ConfigError("eval stride must be positive");
  std::vector<FrontEndConfig> fes;
  std::size_t max_steps = 0;
  for (double len : lengths_s) {
    FrontEndConfig fe = frontend;
    fe.window.history_s = len;
    fe.validate();
    max_steps = std::max(max_steps, fe.window.steps());
    fes.push_back(fe);
  }
  if (eval.columns.end_index() < max_steps) throw DataError("eval session is shorter than the longest input");

  std::vector<LengthSweepPoint> out;
  const LabeledStream* train_streams[] = {&train};
  for (std::size_t i = 0; i < lengths_s.size(); ++i) {
    const auto& fe = fes[i];
    const std::size_t steps = fe.window.steps();
    TrainingRecipe r = recipe;
    r.model.steps = steps;
    r.train_examples.steps = steps;
    r.validation_examples.steps = steps;
    const auto trained = train_checkpoint(train_streams, validation, fe, r);
    const auto& ck = trained.checkpoint;

    FeatureMatrix norm = eval.columns;
    normalize_in_place(norm.raw(), norm.rows(), ck.norm);
    TrainingSet set(steps);
    const auto id = set.add_stream(std::move(norm));
    for (std::size_t k = eval.columns.first_index() + max_steps - 1; k < eval.columns.end_index(); k += eval_stride)
      set.add_example(id, k, eval.labels[k]);

    LengthSweepPoint p;
    p.history_s = lengths_s[i];
    p.steps = steps;
    p.metrics = evaluate(ck.params, set);
    p.mean_error = mean_prediction_error(p.metrics);

    EngineConfig ec;
    ec.channels = probe.channel_count();
    ec.prediction_rate_hz = prediction_rate_hz;
    RecordingSource src({probe});
    p.decode_us = run_pipeline(src, ck, ec, RunMode::Batch).latency.decode();
    out.push_back(p);
  }
  return out;
}

void print_length_table(std::ostream& out, std::span<const LengthSweepPoint> points) {
  const auto flags = out.flags();
  out << std::setw(10) << "input s" << std::setw(8) << "steps" << std::setw(12) << "error %" << std::setw(14)
      << "decode p50 us" << std::setw(14) << "decode p95 us" << '\n'
      << std::fixed;
  for (const auto& p : points)
    out << std::setw(10) << std::setprecision(2) << p.history_s << std::setw(8) << p.steps << std::setw(12)
        << std::setprecision(2) << 100.0 * p.mean_error << std::setw(14) << std::setprecision(0) << p.decode_us.p50
        << std::setw(14) << p.decode_us.p95 << '\n';
  out.flags(flags);
}

nlohmann::json to_json(std::span<const LengthSweepPoint> points) {
  nlohmann::json j = nlohmann::json::array();
  for (const auto& p : points) {
    nlohmann::json dof = nlohmann::json::array();
    for (const auto& m : p.metrics) dof.push_back(m.pred_error);
    j.push_back({{"history_s", p.history_s},
                 {"steps", p.steps},
                 {"mean_error", p.mean_error},
                 {"dof_error", dof},
                 {"decode_p50_us", p.decode_us.p50},
                 {"decode_p95_us", p.decode_us.p95}});
  }
  return j;
}

}  // namespace nd
