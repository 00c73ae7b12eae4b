#pragma once

#include <string>
#include <vector>

#include "vqab/codec.hpp"
#include "vqab/losses.hpp"

namespace vqab {

struct OptimizerSpec {
  double learning_rate = 1e-3;
  double beta1 = 0.5;
  double beta2 = 0.9;
};

/// One training run. Top-level ablation knobs (codebook_size, latent_dim,
/// use_positional_encoding, small_network) are mirrored into `model` by
/// finalize() so the grid file only states what varies.
struct ExperimentSpec {
  std::string name;
  int codebook_size = 32;
  int latent_dim = 8;
  int image_count = 16;
  int epochs = 10;
  bool use_positional_encoding = false;
  bool small_network = false;
  int seed = 1;

  std::string data_dir;  // empty selects the synthetic disc set
  int batch_size = 5;
  double split_fraction = 0.9;
  int grid_every = 0;  // reconstruction grids every N epochs; 0 disables

  ModelConfig model;
  LossWeights weights;
  OptimizerSpec optimizer;

  /// Mirrors top-level knobs into `model` and validates everything.
  void finalize();
};

/// Section/key text config. A repeated [experiment] section starts the next
/// spec of a grid. Unknown sections or keys are errors.
std::vector<ExperimentSpec> parse_config(const std::string& text);
std::vector<ExperimentSpec> load_config(const std::string& path);

/// Deterministic text form embedded in checkpoints.
std::string canonical_config(const ExperimentSpec& spec);

}  // namespace vqab
