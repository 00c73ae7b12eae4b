#pragma once

#include <string>
#include <vector>

#include "vqab/config.hpp"
#include "vqab/nn_blocks.hpp"
#include "vqab/optimizer.hpp"

namespace vqab {

struct Checkpoint {
  uint32_t version = 1;
  ExperimentSpec spec;
  int64_t epoch = 0;
  std::string rng_state;
  std::vector<std::pair<std::string, Tensor>> parameters;  // deep copies
  std::vector<Adam::Slot> optimizer_slots;
  int64_t optimizer_steps = 0;
};

/// Versioned little-endian binary, magic "VQAB". Save, load, save again is
/// byte-identical.
void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

/// Copies the live training state into a checkpoint struct.
Checkpoint snapshot(const ExperimentSpec& spec, const ParamStore& params, const Adam* optimizer, int64_t epoch,
                    const Rng& rng);

/// Writes checkpoint parameter values back into a matching ParamStore.
void restore_parameters(const Checkpoint& ckpt, ParamStore& params);

}  // namespace vqab
