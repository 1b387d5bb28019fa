#include "nd/corpus.hpp"

#include <algorithm>
#include <cmath>

#include "nd/error.hpp"

namespace nd {

namespace {

template <typename Render>
LabeledStream run_session(const std::vector<SegmentPlan>& plan, std::size_t channels, const FrontEndConfig& cfg,
                          Render render) {
  if (cfg.raw_rate_hz != kSynthRateHz) throw ConfigError("front end rate does not match the dataset rate");
  FrontEnd fe(channels, cfg);
  const std::size_t step_raw = cfg.window.step_samples(cfg.feature_rate_hz()) * static_cast<std::size_t>(cfg.decimation);
  LabeledStream out;
  out.channels = channels;
  std::size_t pos = 0;
  for (const auto& seg : plan) {
    if (seg.start_sample != pos) throw DataError("session segments are not contiguous");
    fe.push(render(seg));
    pos += seg.length;
    // Column k ends at raw sample k*step_raw; label it with the gesture held there.
    for (std::size_t k = out.labels.size(); k * step_raw < pos; ++k) out.labels.push_back(seg.gesture);
  }
  out.columns = fe.columns();
  out.labels.resize(out.columns.end_index());
  return out;
}

}  // namespace

LabeledStream extract_stream(const Dataset& dataset, const FrontEndConfig& cfg) {
  const auto& m = dataset.manifest();
  if (m.sample_rate_hz != cfg.raw_rate_hz) throw ConfigError("dataset sample rate does not match the front end");
  return run_session(m.segments, m.profile.channels, cfg, [&](const SegmentPlan& s) { return dataset.recording(s.index); });
}

LabeledStream extract_stream(const SubjectProfile& profile, const std::vector<SegmentPlan>& plan, const FrontEndConfig& cfg) {
  return run_session(plan, profile.channels, cfg, [&](const SegmentPlan& s) { return generate_segment(s, profile).recording; });
}

std::pair<LabeledStream, LabeledStream> split_stream(const LabeledStream& s, double fraction, std::size_t steps) {
  if (!(fraction > 0 && fraction < 1)) throw ConfigError("split fraction must lie in (0, 1)");
  const std::size_t first = s.columns.first_index(), end = s.columns.end_index();
  const auto cut = first + static_cast<std::size_t>(std::llround((1.0 - fraction) * static_cast<double>(end - first)));
  if (cut < first + steps || cut >= end)
    throw DataError("session too short to split at " + std::to_string(fraction));
  auto copy = [&](std::size_t from, std::size_t to) {
    LabeledStream out;
    out.channels = s.channels;
    out.labels = s.labels;
    out.columns = FeatureMatrix(s.columns.rows());
    out.columns.set_first_index(from);
    for (std::size_t k = from; k < to; ++k) {
      const auto src = s.columns.column(k);
      const auto dst = out.columns.append_column();
      std::copy(src.begin(), src.end(), dst.begin());
    }
    return out;
  };
  return {copy(first, cut), copy(cut - (steps - 1), end)};
}

TensorView full_view(const FeatureMatrix& m) {
  if (m.empty()) throw DataError("empty feature stream");
  return m.window(m.end_index() - 1, m.size());
}

NormStats fit_norm_stats(std::span<const LabeledStream* const> streams) {
  std::vector<TensorView> views;
  for (const auto* s : streams) views.push_back(full_view(s->columns));
  return fit_norm_stats(std::span<const TensorView>(views));
}

void add_examples(TrainingSet& set, const LabeledStream& stream, const NormStats& stats, const ExampleSelection& sel) {
  if (sel.stride == 0) throw ConfigError("example stride must be positive");
  if (sel.steps != set.steps()) throw ConfigError("example length does not match the training set");
  FeatureMatrix norm = stream.columns;
  normalize_in_place(norm.raw(), norm.rows(), stats);
  const std::size_t first = norm.first_index() + sel.steps - 1;
  const std::size_t end = norm.end_index();
  const auto id = set.add_stream(std::move(norm));
  for (std::size_t k = first; k < end; k += sel.stride) set.add_example(id, k, stream.labels[k]);
}

TrainingRecipe TrainingRecipe::benchmark(std::size_t input_rows) {
  TrainingRecipe r;
  r.model = ModelConfig::compact(input_rows, 50);
  r.train.lr0 = 1e-3;
  r.train.seeds = {1, 2, 3};
  return r;
}

TrainingOutcome train_checkpoint(std::span<const LabeledStream* const> train, const LabeledStream& validation,
                                 const FrontEndConfig& frontend, const TrainingRecipe& recipe) {
  if (train.empty()) throw ConfigError("no training sessions");
  for (const auto* s : train)
    if (s->channels != validation.channels) throw ConfigError("sessions differ in channel count");
  if (recipe.model.input_rows != validation.columns.rows())
    throw ConfigError("model input rows do not match the feature rows");
  if (recipe.train_examples.steps != recipe.model.steps || recipe.validation_examples.steps != recipe.model.steps)
    throw ConfigError("example length does not match the model");

  TrainingOutcome out;
  const NormStats stats = fit_norm_stats(train);
  TrainingSet train_set(recipe.model.steps), val_set(recipe.model.steps);
  for (const auto* s : train) add_examples(train_set, *s, stats, recipe.train_examples);
  add_examples(val_set, validation, stats, recipe.validation_examples);

  out.result = multi_seed_train(train_set, val_set, recipe.model, recipe.train);
  const auto& best = out.result.best;
  out.validation = evaluate(best.params, val_set);

  Checkpoint& ck = out.checkpoint;
  ck.params = best.params;
  ck.norm = stats;
  ck.frontend = frontend;
  ck.meta.seed = best.history.seed;
  ck.meta.epochs = static_cast<std::uint32_t>(best.history.epoch_loss.size());
  ck.meta.final_loss = best.history.final_loss;
  ck.meta.validation_score = out.result.candidates[out.result.best_index].validation_score;
  ck.fingerprint = make_fingerprint(ck.params, val_set, recipe.fingerprint_examples);
  return out;
}

std::array<DofMetrics, kDofCount> evaluate_stream(const Checkpoint& model, const LabeledStream& stream,
                                                  std::size_t stride) {
  if (stream.columns.rows() != model.params.config.input_rows)
    throw ConfigError("session has " + std::to_string(stream.columns.rows()) + " feature rows, model expects " +
                      std::to_string(model.params.config.input_rows));
  TrainingSet set(model.params.config.steps);
  add_examples(set, stream, model.norm, {model.params.config.steps, stride});
  return evaluate(model.params, set);
}

}  // namespace nd
