#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "nd/features.hpp"
#include "nd/frontend.hpp"
#include "nd/model.hpp"
#include "nd/train.hpp"

namespace nd {

inline constexpr std::uint16_t kCheckpointVersion = 1;

struct TrainingMetadata {
  std::uint64_t seed = 0;
  std::uint32_t epochs = 0;
  double final_loss = 0;
  double validation_score = 0;  // mean per-DOF balanced accuracy on the validation split
  friend bool operator==(const TrainingMetadata&, const TrainingMetadata&) = default;
};

// A few stored inputs with the probabilities and accuracy the model produced
// on them at save time.
struct Fingerprint {
  std::size_t rows = 0;
  std::size_t steps = 0;
  std::vector<double> inputs;  // time-major, one [rows x steps] block per example
  std::vector<GestureLabel> labels;
  std::vector<Probabilities> probabilities;
  double accuracy = 0;  // mean balanced accuracy of the thresholded predictions

  std::size_t size() const { return labels.size(); }
  TensorView input(std::size_t i) const { return {inputs.data() + i * rows * steps, rows, steps}; }
};

struct Checkpoint {
  ModelParams params;
  NormStats norm;
  FrontEndConfig frontend;
  TrainingMetadata meta;
  Fingerprint fingerprint;
};

// Takes up to `count` examples spread evenly over the set.
Fingerprint make_fingerprint(const ModelParams& params, const TrainingSet& data, std::size_t count);
double fingerprint_accuracy(const ModelParams& params, const Fingerprint& fp);

// "NDM1", u16 version, model config, front-end settings, normalization
// statistics, named float32 tensors with shapes, training metadata,
// fingerprint batch, CRC32 of everything before the trailer.
std::vector<std::uint8_t> save_checkpoint(const Checkpoint& ckpt);
Checkpoint load_checkpoint(std::span<const std::uint8_t> bytes);

// Recomputes the fingerprint probabilities; LoadError if any differs by more
// than tolerance.
void verify_fingerprint(const Checkpoint& ckpt, double tolerance = 1e-10);

void write_checkpoint(const std::string& path, const Checkpoint& ckpt);
// Loads and verifies the fingerprint. ConfigError if the file is missing.
Checkpoint read_checkpoint(const std::string& path);

}  // namespace nd
