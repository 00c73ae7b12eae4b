#include "vqab/codebook.hpp"

#include <algorithm>
#include <stdexcept>

#include "vqab/ops.hpp"

namespace vqab {

namespace op = ops;

Codebook::Codebook(int size, int dim, Rng& rng) : size_(size), dim_(dim) {
  if (size < 1 || dim < 1) throw std::invalid_argument("Codebook: K and D must be at least 1");
  double bound = 1.0 / size;
  embeddings_ = Tensor::uniform({size, dim}, -bound, bound, rng);
  embeddings_.set_requires_grad(true);
  usage_counts_.assign(static_cast<size_t>(size), 0);
}

QuantizationResult Codebook::quantize(const Tensor& z) {
  const Shape& s = z.shape();
  if (s.size() != 4)
    throw std::invalid_argument("Codebook::quantize: expected (N,D,H,W) input, got " + shape_str(s));
  if (s[1] != dim_)
    throw std::invalid_argument("Codebook::quantize: latent dim mismatch, input " + shape_str(s) +
                                " vs codebook dim " + std::to_string(dim_));
  int N = s[0], D = s[1], H = s[2], W = s[3];
  if (N < 1) throw std::invalid_argument("Codebook::quantize: empty batch");
  int R = N * H * W;

  // (N,D,H,W) -> (N,H,W,D) -> (R,D)
  Tensor flat = op::reshape(op::permute(z, {0, 2, 3, 1}), {R, D});
  const auto& fv = flat.value();
  const auto& ev = embeddings_.value();

  // Squared Euclidean distances in expanded form ||a||^2 - 2 a.b + ||b||^2.
  std::vector<double> emb_sq(static_cast<size_t>(size_));
  for (int k = 0; k < size_; ++k) {
    double ss = 0.0;
    for (int d = 0; d < D; ++d) ss += ev[k * D + d] * ev[k * D + d];
    emb_sq[k] = ss;
  }
  std::vector<int> indices(static_cast<size_t>(R));
  for (int r = 0; r < R; ++r) {
    double row_sq = 0.0;
    for (int d = 0; d < D; ++d) row_sq += fv[r * D + d] * fv[r * D + d];
    int best = 0;
    double best_dist = 0.0;
    for (int k = 0; k < size_; ++k) {
      double dot = 0.0;
      const double* e = &ev[static_cast<size_t>(k) * D];
      const double* a = &fv[static_cast<size_t>(r) * D];
      for (int d = 0; d < D; ++d) dot += a[d] * e[d];
      double dist = row_sq - 2.0 * dot + emb_sq[k];
      if (k == 0 || dist < best_dist) {
        best_dist = dist;
        best = k;
      }
    }
    indices[r] = best;
    usage_counts_[static_cast<size_t>(best)] += 1;
  }

  Tensor zq_flat = op::gather_rows(embeddings_, indices);
  Tensor z_q = op::permute(op::reshape(zq_flat, {N, H, W, D}), {0, 3, 1, 2});

  Tensor z_const = op::detach(z);
  Tensor zq_const = op::detach(z_q);
  Tensor cb_diff = op::sub(z_const, z_q);
  Tensor codebook_loss = op::mean(op::mul(cb_diff, cb_diff));
  Tensor cm_diff = op::sub(z, zq_const);
  Tensor commitment_loss = op::mean(op::mul(cm_diff, cm_diff));
  // z + detach(z_q - z): the value is z_q bit-exactly, the gradient is the
  // identity onto z.
  Tensor straight_through = op::value_from_grad_to(zq_const, z);

  QuantizationResult res;
  res.z_q = z_q;
  res.straight_through = straight_through;
  res.indices = std::move(indices);
  res.codebook_loss = codebook_loss;
  res.commitment_loss = commitment_loss;
  res.flattened_shape = {R, D};
  res.distance_shape = {R, size_};
  return res;
}

void Codebook::reset_usage() { std::fill(usage_counts_.begin(), usage_counts_.end(), 0); }

std::vector<std::pair<int, int64_t>> Codebook::dead_code_report() const {
  std::vector<std::pair<int, int64_t>> report;
  report.reserve(usage_counts_.size());
  for (int k = 0; k < size_; ++k) report.emplace_back(k, usage_counts_[static_cast<size_t>(k)]);
  std::stable_sort(report.begin(), report.end(),
                   [](const auto& a, const auto& b) { return a.second < b.second; });
  return report;
}

double Codebook::usage_fraction() const {
  int used = 0;
  for (int64_t c : usage_counts_)
    if (c > 0) ++used;
  return static_cast<double>(used) / size_;
}

}  // namespace vqab
