#pragma once

#include <array>
#include <cstddef>
#include <ostream>
#include <span>
#include <vector>

#include <json.hpp>

#include "nd/corpus.hpp"
#include "nd/engine.hpp"

namespace nd {

struct LengthSweepPoint {
  double history_s = 0;
  std::size_t steps = 0;
  std::array<DofMetrics, kDofCount> metrics{};
  double mean_error = 0;
  LatencyStats decode_us;  // per frame, streaming at the prediction rate
};

// Trains one model per decoder input length and scores each on the same
// eval columns (those every length can see). Decode latency comes from
// streaming `probe` through the engine in batch mode.
std::vector<LengthSweepPoint> sweep_input_length(const LabeledStream& train, const LabeledStream& validation,
                                                 const LabeledStream& eval, const Recording& probe,
                                                 const FrontEndConfig& frontend, const TrainingRecipe& recipe,
                                                 std::span<const double> lengths_s, double prediction_rate_hz = 10.0,
                                                 std::size_t eval_stride = 1);

void print_length_table(std::ostream& out, std::span<const LengthSweepPoint> points);
nlohmann::json to_json(std::span<const LengthSweepPoint> points);

}  // namespace nd
