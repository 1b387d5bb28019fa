#include "nd/metrics.hpp"

#include <cmath>
#include <iomanip>

#include <json.hpp>

#include "nd/error.hpp"

namespace nd {

ConfusionCounts confusion(std::span<const GestureLabel> predictions, std::span<const GestureLabel> truth) {
  if (predictions.size() != truth.size())
    throw DataError("prediction and truth sequences differ in length (" + std::to_string(predictions.size()) +
                    " vs " + std::to_string(truth.size()) + ")");
  ConfusionCounts c;
  for (std::size_t i = 0; i < truth.size(); ++i)
    for (std::size_t d = 0; d < kDofCount; ++d) {
      const bool p = predictions[i].flexed(d), t = truth[i].flexed(d);
      auto& k = c.dof[d];
      if (p && t) ++k.tp;
      else if (!p && !t) ++k.tn;
      else if (p) ++k.fp;
      else ++k.fn;
    }
  return c;
}

DofMetrics balanced_accuracy(const DofCounts& c) {
  DofMetrics m;
  const auto pos = c.tp + c.fn, neg = c.tn + c.fp;
  if (pos > 0) m.tpr = static_cast<double>(c.tp) / static_cast<double>(pos);
  if (neg > 0) m.tnr = static_cast<double>(c.tn) / static_cast<double>(neg);
  m.defined = pos > 0 && neg > 0;
  m.bal_acc = (m.tpr + m.tnr) / 2.0;
  m.pred_error = 1.0 - m.bal_acc;
  return m;
}

std::array<DofMetrics, kDofCount> balanced_accuracy(const ConfusionCounts& c) {
  std::array<DofMetrics, kDofCount> out;
  for (std::size_t d = 0; d < kDofCount; ++d) out[d] = balanced_accuracy(c.dof[d]);
  return out;
}

double mean_balanced_accuracy(const std::array<DofMetrics, kDofCount>& m) {
  double sum = 0;
  int n = 0;
  for (const auto& d : m)
    if (d.defined) {
      sum += d.bal_acc;
      ++n;
    }
  return n ? sum / n : 0.0;
}

double mean_prediction_error(const std::array<DofMetrics, kDofCount>& m) {
  double sum = 0;
  int n = 0;
  for (const auto& d : m)
    if (d.defined) {
      sum += d.pred_error;
      ++n;
    }
  return n ? sum / n : 1.0;
}

std::vector<std::size_t> align_nearest(std::span<const double> pred, std::span<const double> truth) {
  if (pred.empty()) throw DataError("no predictions to align");
  std::vector<std::size_t> out;
  out.reserve(truth.size());
  std::size_t j = 0;
  for (double t : truth) {
    while (j + 1 < pred.size() && pred[j + 1] <= t) ++j;
    std::size_t best = j;
    if (j + 1 < pred.size() && std::fabs(pred[j + 1] - t) < std::fabs(t - pred[j])) best = j + 1;
    out.push_back(best);
  }
  return out;
}

void GestureDistribution::validate() const {
  if (entries.empty()) throw ConfigError("empty gesture distribution");
  double sum = 0;
  for (const auto& [g, p] : entries) {
    if (!(p >= 0.0)) throw ConfigError("negative gesture probability");
    sum += p;
  }
  if (std::fabs(sum - 1.0) > 1e-12) throw ConfigError("gesture probabilities do not sum to 1");
}

GestureDistribution GestureDistribution::rest_half(std::span<const GestureLabel> others) {
  if (others.empty()) throw ConfigError("need at least one non-rest gesture");
  GestureDistribution d;
  d.entries.emplace_back(kRest, 0.5);
  for (const auto& g : others) d.entries.emplace_back(g, 0.5 / static_cast<double>(others.size()));
  return d;
}

double entropy_bits(std::span<const double> probabilities) {
  double h = 0;
  for (double p : probabilities)
    if (p > 0) h -= p * std::log2(p);
  return h;
}

double info_per_trial(const GestureDistribution& dist, int selections_per_trial) {
  dist.validate();
  if (selections_per_trial < 1) throw ConfigError("selections per trial must be at least 1");
  std::vector<double> p;
  for (const auto& e : dist.entries) p.push_back(e.second);
  return selections_per_trial * entropy_bits(p);
}

Throughput information_throughput(double success_rate, double info_bits, double reaction_time_s) {
  if (!(reaction_time_s > 0)) throw ConfigError("reaction time must be positive");
  if (!(success_rate >= 0 && success_rate <= 1)) throw ConfigError("success rate must lie in [0, 1]");
  Throughput t;
  t.bps = success_rate * info_bits / reaction_time_s;
  t.bpm = 60.0 * t.bps;
  return t;
}

namespace {
nlohmann::json dof_record(std::size_t d, const DofCounts& c, const DofMetrics& m) {
  return {{"dof", d},        {"name", kDofNames[d]}, {"tp", c.tp},         {"tn", c.tn},
          {"fp", c.fp},      {"fn", c.fn},           {"tpr", m.tpr},       {"tnr", m.tnr},
          {"bal_acc", m.bal_acc}, {"pred_error", m.pred_error}, {"defined", m.defined}};
}
}  // namespace

void write_metrics_jsonl(std::ostream& out, const ConfusionCounts& counts, const std::array<DofMetrics, kDofCount>& m) {
  for (std::size_t d = 0; d < kDofCount; ++d) out << dof_record(d, counts.dof[d], m[d]).dump() << '\n';
}

std::string metrics_summary_json(const ConfusionCounts& counts, const std::array<DofMetrics, kDofCount>& m) {
  nlohmann::json j;
  j["dof"] = nlohmann::json::array();
  for (std::size_t d = 0; d < kDofCount; ++d) j["dof"].push_back(dof_record(d, counts.dof[d], m[d]));
  j["mean_bal_acc"] = mean_balanced_accuracy(m);
  j["mean_pred_error"] = mean_prediction_error(m);
  j["frames"] = counts.dof[0].total();
  return j.dump(2);
}

void print_metrics_table(std::ostream& out, const std::array<DofMetrics, kDofCount>& m) {
  out << std::left << std::setw(10) << "DOF" << std::right << std::setw(10) << "TPR %" << std::setw(10) << "TNR %"
      << std::setw(12) << "BalAcc %" << std::setw(10) << "Err %" << '\n';
  out << std::fixed << std::setprecision(1);
  for (std::size_t d = 0; d < kDofCount; ++d) {
    out << std::left << std::setw(10) << kDofNames[d] << std::right;
    if (!m[d].defined) {
      out << std::setw(42) << "(undefined: one class absent)" << '\n';
      continue;
    }
    out << std::setw(10) << 100 * m[d].tpr << std::setw(10) << 100 * m[d].tnr << std::setw(12) << 100 * m[d].bal_acc
        << std::setw(10) << 100 * m[d].pred_error << '\n';
  }
  out << std::left << std::setw(10) << "mean" << std::right << std::setw(32) << 100 * mean_balanced_accuracy(m)
      << std::setw(10) << 100 * mean_prediction_error(m) << '\n';
  out.unsetf(std::ios::floatfield);
}

}  // namespace nd
