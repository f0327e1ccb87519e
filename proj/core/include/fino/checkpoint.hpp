#pragma once

#include <cstdint>
#include <string>

#include "fino/model.hpp"

namespace fino {

// Training state carried alongside the weights.
struct CheckpointMeta {
  std::uint64_t rng_seed = 0;
  std::uint64_t rng_counter = 0;
  int epoch = 0;
  double best_val_f1 = 0.0;
  std::string note;
};

// Versioned little-endian container: magic, config echo, metadata, then
// named tensors (parameters with their freeze flags, plus batch-norm
// running statistics) stored as 32-bit floats. Identical model state
// produces identical bytes.
void save_checkpoint(const std::string& path, FinoNet& model,
                     const CheckpointMeta& meta);

// Rebuilds the model from the embedded config and fails with a data error
// on any missing, surplus, or misshapen tensor.
FinoNet load_checkpoint(const std::string& path,
                        CheckpointMeta* meta_out = nullptr);

}  // namespace fino
