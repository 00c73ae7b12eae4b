#include <cmath>

#include "doctest.h"
#include "vqab/codebook.hpp"
#include "vqab/ops.hpp"

using namespace vqab;
namespace op = vqab::ops;

namespace {

// O(R*K*D) direct nearest-neighbor search, plain loops over raw distances.
std::vector<int> nn_oracle(const std::vector<double>& flat, const std::vector<double>& emb, int R, int K, int D) {
  std::vector<int> idx(R);
  for (int r = 0; r < R; ++r) {
    double best = 1e300;
    int arg = 0;
    for (int k = 0; k < K; ++k) {
      double d2 = 0;
      for (int d = 0; d < D; ++d) {
        double diff = flat[r * D + d] - emb[k * D + d];
        d2 += diff * diff;
      }
      if (d2 < best) {
        best = d2;
        arg = k;
      }
    }
    idx[r] = arg;
  }
  return idx;
}

std::vector<double> flatten_nhwd(const Tensor& z) {
  const Shape& s = z.shape();
  int N = s[0], D = s[1], H = s[2], W = s[3];
  std::vector<double> out(static_cast<size_t>(N) * H * W * D);
  size_t r = 0;
  for (int n = 0; n < N; ++n)
    for (int h = 0; h < H; ++h)
      for (int w = 0; w < W; ++w, ++r)
        for (int d = 0; d < D; ++d) out[r * D + d] = z.value()[((n * D + d) * H + h) * W + w];
  return out;
}

}  // namespace

TEST_CASE("quantize shape contract for the worked configuration") {
  Rng rng(1);
  Codebook book(1024, 256, rng);
  Tensor z = Tensor::uniform({5, 256, 16, 16}, -1, 1, rng);
  auto res = book.quantize(z);
  CHECK(res.flattened_shape == std::pair<int, int>{1280, 256});
  CHECK(res.distance_shape == std::pair<int, int>{1280, 1024});
  CHECK(res.z_q.shape() == Shape{5, 256, 16, 16});
  CHECK(res.indices.size() == 1280);
}

TEST_CASE("exact-match vector quantizes losslessly") {
  Rng rng(2);
  Codebook book(8, 3, rng);
  // Build input whose single vector equals row 5 of the embeddings.
  const auto& emb = book.embeddings().value();
  std::vector<double> zv = {emb[5 * 3 + 0], emb[5 * 3 + 1], emb[5 * 3 + 2]};
  Tensor z = Tensor::from({1, 3, 1, 1}, zv);
  auto res = book.quantize(z);
  CHECK(res.indices[0] == 5);
  CHECK(res.codebook_loss.item() == 0.0);
  CHECK(res.commitment_loss.item() == 0.0);
}

TEST_CASE("quantize matches the brute-force oracle") {
  Rng rng(3);
  for (int rep = 0; rep < 20; ++rep) {
    int K = rng.uniform_int(2, 7), D = rng.uniform_int(1, 3);
    int N = rng.uniform_int(1, 2), H = rng.uniform_int(1, 3), W = rng.uniform_int(1, 2);
    Codebook book(K, D, rng);
    Tensor z = Tensor::uniform({N, D, H, W}, -1, 1, rng);
    auto res = book.quantize(z);
    auto flat = flatten_nhwd(z);
    auto expect = nn_oracle(flat, book.embeddings().value(), N * H * W, K, D);
    CHECK(res.indices == expect);
    // z_q values are bit-identical to gathered embedding rows.
    auto zq_flat = flatten_nhwd(res.z_q);
    for (int r = 0; r < N * H * W; ++r)
      for (int d = 0; d < D; ++d) CHECK(zq_flat[r * D + d] == book.embeddings().value()[expect[r] * D + d]);
  }
}

TEST_CASE("straight-through identity") {
  Rng rng(4);
  Codebook book(5, 2, rng);
  TapeScope scope;
  Tensor z = Tensor::uniform({1, 2, 2, 2}, -1, 1, rng);
  z.set_requires_grad(true);
  auto res = book.quantize(z);
  // Inject an arbitrary upstream gradient via a weighted sum.
  Tensor weights = Tensor::uniform({1, 2, 2, 2}, -2, 2, rng);
  scope.backward(op::sum(op::mul(res.straight_through, weights)));
  CHECK(z.grad() == weights.value());
  // Embeddings receive nothing through the straight-through path.
  for (double g : book.embeddings().grad()) CHECK(g == 0.0);
}

TEST_CASE("gradient separation between the two loss terms") {
  Rng rng(5);

  SUBCASE("commitment loss reaches only the encoder side") {
    Codebook book(5, 2, rng);
    TapeScope scope;
    Tensor z = Tensor::uniform({1, 2, 2, 2}, -1, 1, rng);
    z.set_requires_grad(true);
    auto res = book.quantize(z);
    scope.backward(res.commitment_loss);
    for (double g : book.embeddings().grad()) CHECK(g == 0.0);
    bool any = false;
    for (double g : z.grad()) any = any || g != 0.0;
    CHECK(any);
  }

  SUBCASE("codebook loss reaches only the embeddings") {
    Codebook book(5, 2, rng);
    TapeScope scope;
    Tensor z = Tensor::uniform({1, 2, 2, 2}, -1, 1, rng);
    z.set_requires_grad(true);
    auto res = book.quantize(z);
    scope.backward(res.codebook_loss);
    for (double g : z.grad()) CHECK(g == 0.0);
    bool any = false;
    for (double g : book.embeddings().grad()) any = any || g != 0.0;
    CHECK(any);
  }
}

TEST_CASE("permuting codebook rows permutes indices but nothing else") {
  Rng rng(6);
  Codebook book(6, 3, rng);
  Tensor z = Tensor::uniform({1, 3, 2, 2}, -1, 1, rng);
  auto res = book.quantize(z);

  // Reversed-row codebook built over the same RNG-independent data.
  Rng rng2(999);
  Codebook rev(6, 3, rng2);
  const auto& emb = book.embeddings().value();
  auto& rv = rev.embeddings().mutable_value();
  for (int k = 0; k < 6; ++k)
    for (int d = 0; d < 3; ++d) rv[(5 - k) * 3 + d] = emb[k * 3 + d];
  auto res2 = rev.quantize(z);

  for (size_t i = 0; i < res.indices.size(); ++i) CHECK(res2.indices[i] == 5 - res.indices[i]);
  CHECK(res2.z_q.value() == res.z_q.value());
  CHECK(res2.codebook_loss.item() == res.codebook_loss.item());
  CHECK(res2.commitment_loss.item() == res.commitment_loss.item());
  CHECK(res2.straight_through.value() == res.straight_through.value());
}

TEST_CASE("dead_code_report") {
  Rng rng(7);

  SUBCASE("all traffic to one code leaves the rest dead") {
    Codebook book(4, 2, rng);
    // Push all embeddings far away except row 2.
    auto& ev = book.embeddings().mutable_value();
    for (int k = 0; k < 4; ++k)
      for (int d = 0; d < 2; ++d) ev[k * 2 + d] = (k == 2) ? 0.0 : 100.0;
    Tensor z = Tensor::uniform({1, 2, 2, 2}, -0.1, 0.1, rng);
    book.quantize(z);
    auto report = book.dead_code_report();
    int dead = 0;
    for (auto& [idx, count] : report)
      if (count == 0) {
        ++dead;
        CHECK(idx != 2);
      }
    CHECK(dead == 3);
    CHECK(report.back().first == 2);
    CHECK(report.back().second == 4);
  }

  SUBCASE("reset zeroes all counts") {
    Codebook book(4, 2, rng);
    Tensor z = Tensor::uniform({1, 2, 2, 2}, -1, 1, rng);
    book.quantize(z);
    book.reset_usage();
    for (auto c : book.usage_counts()) CHECK(c == 0);
  }

  SUBCASE("counts sum to vectors quantized across passes") {
    Codebook book(5, 2, rng);
    int passes = 3, n = 2, h = 3, w = 2;
    for (int p = 0; p < passes; ++p) {
      Tensor z = Tensor::uniform({n, 2, h, w}, -1, 1, rng);
      book.quantize(z);
    }
    int64_t total = 0;
    for (auto c : book.usage_counts()) total += c;
    CHECK(total == static_cast<int64_t>(passes) * n * h * w);
  }
}
