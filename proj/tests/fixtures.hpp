#pragma once

#include <random>

#include "nd/features.hpp"
#include "nd/model.hpp"
#include "nd/train.hpp"

namespace fixtures {

// Random normalized stream with labels that depend on the newest column, so
// a model can fit them.
inline nd::TrainingSet random_set(std::size_t rows, std::size_t steps, std::size_t columns, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, 1.0);
  nd::FeatureMatrix m(rows);
  for (std::size_t k = 0; k < columns; ++k)
    for (double& v : m.append_column()) v = n(rng);
  nd::TrainingSet set(steps);
  const auto s = set.add_stream(m);
  for (std::size_t k = steps - 1; k < columns; ++k) {
    const auto col = set.stream(s).column(k);
    std::uint8_t mask = 0;
    for (std::size_t d = 0; d < nd::kDofCount; ++d)
      if (col[d] > 0.3) mask |= static_cast<std::uint8_t>(1U << d);
    set.add_example(s, k, nd::GestureLabel::from_mask(mask));
  }
  return set;
}

inline nd::ModelParams random_params(const nd::ModelConfig& cfg, std::uint64_t seed) {
  nd::ModelParams p(cfg);
  std::mt19937_64 rng(seed);
  p.init_uniform(rng);
  p.round_to_float();
  return p;
}

}  // namespace fixtures
