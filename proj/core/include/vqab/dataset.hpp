#pragma once

#include <string>
#include <vector>

#include "vqab/tensor.hpp"

namespace vqab {

struct Dataset {
  std::vector<Tensor> train;  // (3,S,S) each, values in [-1,1]
  std::vector<Tensor> val;
  std::vector<std::string> train_names;
  std::vector<std::string> val_names;
};

/// Deterministic selection: filenames sorted lexicographically, shuffled by
/// the seeded rng, first image_count taken, center-cropped, resized, split.
Dataset load_dataset(const std::string& dir, int image_count, int image_size, double split_fraction, uint64_t seed);

/// Seeded synthetic set: colored discs on colored backgrounds.
std::vector<Tensor> synthetic_disc_images(int count, int image_size, uint64_t seed);

}  // namespace vqab
