#include "nd/train.hpp"

#include <omp.h>

#include <algorithm>
#include <cmath>
#include <exception>
#include <numeric>

#include "nd/error.hpp"

namespace nd {

namespace {
std::uint64_t splitmix(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}
constexpr std::size_t kEvalBatch = 64;
}  // namespace

void TrainConfig::validate() const {
  if (!(beta1 > 0 && beta1 < 1) || !(beta2 > 0 && beta2 < 1)) throw ConfigError("Adam betas must lie in (0, 1)");
  if (!(lr0 >= 0)) throw ConfigError("learning rate must be non-negative");
  if (batch_size == 0) throw ConfigError("batch size must be positive");
  if (max_epochs == 0) throw ConfigError("need at least one epoch");
  if (plateau_epochs == 0) throw ConfigError("plateau patience must be positive");
  if (!(lr_drop_factor >= 1)) throw ConfigError("learning-rate drop factor must be at least 1");
  if (seeds.empty()) throw ConfigError("need at least one seed");
}

std::uint32_t TrainingSet::add_stream(FeatureMatrix normalized) {
  if (!streams_.empty() && normalized.rows() != streams_.front().rows())
    throw ConfigError("feature streams have different row counts");
  streams_.push_back(std::move(normalized));
  return static_cast<std::uint32_t>(streams_.size() - 1);
}

void TrainingSet::add_example(std::uint32_t stream, std::size_t column, GestureLabel label) {
  if (stream >= streams_.size() || !streams_[stream].has_window(column, steps_))
    throw DataError("example window ending at column " + std::to_string(column) + " is not available");
  examples_.push_back({stream, column, label});
}

TensorView TrainingSet::input(std::size_t i) const {
  const auto& e = examples_[i];
  return streams_[e.stream].window(e.column, steps_);
}

Adam::Adam(const ModelParams& shape, const TrainConfig& cfg)
    : beta1_(cfg.beta1), beta2_(cfg.beta2), eps_(cfg.adam_eps), weight_decay_(cfg.weight_decay) {
  for (const auto* t : shape.trainable()) {
    m_.emplace_back(t->size(), 0.0);
    v_.emplace_back(t->size(), 0.0);
  }
}

void Adam::step(ModelParams& params, const ModelParams& grads, double lr) {
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  auto ps = params.trainable();
  auto gs = grads.trainable();
  for (std::size_t i = 0; i < ps.size(); ++i) {
    auto& p = ps[i]->values;
    const auto& g = gs[i]->values;
    auto& m = m_[i];
    auto& v = v_[i];
    for (std::size_t k = 0; k < p.size(); ++k) {
      m[k] = beta1_ * m[k] + (1.0 - beta1_) * g[k];
      v[k] = beta2_ * v[k] + (1.0 - beta2_) * g[k] * g[k];
      const double update = (m[k] / c1) / (std::sqrt(v[k] / c2) + eps_);
      p[k] -= lr * (update + weight_decay_ * p[k]);
    }
  }
}

TrainedModel train(const TrainingSet& data, const ModelConfig& model_cfg, const TrainConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  model_cfg.validate();
  if (data.empty()) throw ConfigError("training set is empty");
  if (data.rows() != model_cfg.input_rows || data.steps() != model_cfg.steps)
    throw ConfigError("training data shape does not match the model configuration");

  TrainedModel out{ModelParams(model_cfg), {}};
  out.history.seed = seed;
  std::mt19937_64 init_rng(seed);
  std::mt19937_64 shuffle_rng(cfg.shuffle_seed ? *cfg.shuffle_seed : splitmix(seed ^ 0x5348554646ULL));
  std::mt19937_64 dropout_rng(splitmix(seed ^ 0x44524f50ULL));
  out.params.init_uniform(init_rng);

  // Canonical example order makes results independent of insertion order.
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return std::tie(data.example(a), a) < std::tie(data.example(b), b);
  });

  Adam adam(out.params, cfg);
  ModelParams grads(model_cfg);
  double lr = cfg.lr0;
  double best = std::numeric_limits<double>::infinity();
  std::size_t bad_epochs = 0;
  std::vector<TensorView> xs;
  std::vector<GestureLabel> ys;
  BackwardOptions opts;
  opts.dropout_rng = &dropout_rng;
  opts.update_running_stats = true;

  for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    std::vector<std::size_t> perm = order;
    std::shuffle(perm.begin(), perm.end(), shuffle_rng);
    double sum = 0.0;
    for (std::size_t b = 0; b < perm.size(); b += cfg.batch_size) {
      const std::size_t e = std::min(perm.size(), b + cfg.batch_size);
      xs.clear();
      ys.clear();
      for (std::size_t i = b; i < e; ++i) {
        xs.push_back(data.input(perm[i]));
        ys.push_back(data.label(perm[i]));
      }
      const double l = backward(xs, ys, out.params, grads, opts);
      adam.step(out.params, grads, lr);
      sum += l * static_cast<double>(e - b);
    }
    const double epoch_loss = sum / static_cast<double>(perm.size());
    out.history.epoch_loss.push_back(epoch_loss);
    out.history.epoch_lr.push_back(lr);
    if (epoch_loss < best * (1.0 - cfg.plateau_threshold) || !std::isfinite(best)) {
      best = epoch_loss;
      bad_epochs = 0;
    } else if (++bad_epochs >= cfg.plateau_epochs) {
      lr /= cfg.lr_drop_factor;
      bad_epochs = 0;
      out.history.lr_drop_epochs.push_back(epoch);
    }
  }
  if (!out.params.all_finite()) throw NumericFault("training diverged to non-finite parameters");
  out.params.round_to_float();
  out.history.final_loss = out.history.epoch_loss.back();
  return out;
}

std::vector<Probabilities> predict_probabilities(const ModelParams& params, const TrainingSet& data) {
  std::vector<Probabilities> out;
  out.reserve(data.size());
  std::vector<TensorView> xs;
  for (std::size_t b = 0; b < data.size(); b += kEvalBatch) {
    xs.clear();
    for (std::size_t i = b; i < std::min(data.size(), b + kEvalBatch); ++i) xs.push_back(data.input(i));
    auto p = forward_batch(xs, params, Mode::Eval);
    out.insert(out.end(), p.begin(), p.end());
  }
  return out;
}

std::vector<GestureLabel> predict_labels(const ModelParams& params, const TrainingSet& data) {
  std::vector<GestureLabel> out;
  for (const auto& p : predict_probabilities(params, data)) out.push_back(threshold(p));
  return out;
}

std::array<DofMetrics, kDofCount> evaluate(const ModelParams& params, const TrainingSet& data) {
  const auto pred = predict_labels(params, data);
  std::vector<GestureLabel> truth;
  truth.reserve(data.size());
  for (std::size_t i = 0; i < data.size(); ++i) truth.push_back(data.label(i));
  return balanced_accuracy(confusion(pred, truth));
}

MultiSeedResult multi_seed_train(const TrainingSet& train_set, const TrainingSet& validation,
                                 const ModelConfig& model_cfg, const TrainConfig& cfg) {
  cfg.validate();
  if (validation.empty()) throw ConfigError("validation set is empty");
  std::vector<std::uint64_t> seeds = cfg.seeds;
  std::sort(seeds.begin(), seeds.end());
  seeds.erase(std::unique(seeds.begin(), seeds.end()), seeds.end());

  std::vector<std::optional<TrainedModel>> models(seeds.size());
  std::vector<double> scores(seeds.size(), 0.0);
  std::exception_ptr err;
#pragma omp parallel for schedule(dynamic, 1)
  for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(seeds.size()); ++i) {
    try {
      auto m = train(train_set, model_cfg, cfg, seeds[static_cast<std::size_t>(i)]);
      scores[static_cast<std::size_t>(i)] = mean_balanced_accuracy(evaluate(m.params, validation));
      models[static_cast<std::size_t>(i)] = std::move(m);
    } catch (...) {
#pragma omp critical
      if (!err) err = std::current_exception();
    }
  }
  if (err) std::rethrow_exception(err);

  MultiSeedResult out;
  for (std::size_t i = 0; i < seeds.size(); ++i) {
    out.candidates.push_back({seeds[i], scores[i], models[i]->history});
    if (scores[i] > scores[out.best_index]) out.best_index = i;
  }
  out.best = std::move(*models[out.best_index]);
  return out;
}

}  // namespace nd
