#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "vqab/tensor.hpp"

namespace vqab {

struct QuantizationResult {
  Tensor z_q;               // (N,D,H,W), rows gathered from the codebook
  Tensor straight_through;  // z + detach(z_q - z); identity gradient to z
  std::vector<int> indices;  // N*H*W entries in [0, K)
  Tensor codebook_loss;      // mean ||detach(z) - z_q||^2
  Tensor commitment_loss;    // mean ||z - detach(z_q)||^2
  std::pair<int, int> flattened_shape;  // (N*H*W, D)
  std::pair<int, int> distance_shape;   // (N*H*W, K)
};

/// K x D learnable embedding matrix with per-row usage counters.
class Codebook {
 public:
  Codebook(int size, int dim, Rng& rng);

  int size() const { return size_; }
  int dim() const { return dim_; }
  Tensor embeddings() const { return embeddings_; }
  const std::vector<int64_t>& usage_counts() const { return usage_counts_; }

  /// Nearest-neighbor quantization of an (N,D,H,W) latent grid with the
  /// straight-through gradient path and both codebook-side losses. Ties in
  /// the distance argmin break to the lowest index. Mutates usage counters.
  QuantizationResult quantize(const Tensor& z);

  void reset_usage();

  /// (index, count) sorted by ascending count then index; count 0 is dead.
  std::vector<std::pair<int, int64_t>> dead_code_report() const;

  /// Fraction of codebook rows selected at least once since the last reset.
  double usage_fraction() const;

 private:
  int size_, dim_;
  Tensor embeddings_;
  std::vector<int64_t> usage_counts_;
};

}  // namespace vqab
