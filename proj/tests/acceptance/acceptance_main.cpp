// Acceptance gate: one pass/fail line per criterion, non-zero exit on any
// failure. Criterion 7 needs a real flower-image dataset and is skipped
// unless VQAB_FLOWERS_DIR points at a directory of PPM files.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "vqab/checkpoint.hpp"
#include "vqab/codec.hpp"
#include "vqab/dataset.hpp"
#include "vqab/gradcheck.hpp"
#include "vqab/image.hpp"
#include "vqab/losses.hpp"
#include "vqab/ops.hpp"
#include "vqab/pca.hpp"
#include "vqab/trainer.hpp"

namespace fs = std::filesystem;
using namespace vqab;
namespace op = vqab::ops;

namespace {

int g_failures = 0;

void report(int number, const std::string& name, bool pass, const std::string& detail = "") {
  std::printf("[%s] criterion %d: %s%s%s\n", pass ? "PASS" : "FAIL", number, name.c_str(),
              detail.empty() ? "" : " - ", detail.c_str());
  std::fflush(stdout);
  if (!pass) ++g_failures;
}

double elapsed_s(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// 1. Every primitive, block and loss against central finite differences.
void criterion1() {
  auto t0 = std::chrono::steady_clock::now();
  auto results = gradcheck::run_gradient_checks("", 20);
  double secs = elapsed_s(t0);
  bool pass = !results.empty() && secs < 300.0;
  std::string detail;
  for (const auto& r : results)
    if (!r.pass) {
      pass = false;
      detail += r.name + " max_err=" + std::to_string(r.max_err) + "; ";
    }
  char buf[128];
  std::snprintf(buf, sizeof(buf), "%zu checks x 20 shapes in %.1fs", results.size(), secs);
  report(1, "gradient suite", pass, detail.empty() ? buf : detail);
}

// 2. Quantizer against a brute-force oracle, plus straight-through and
// gradient-separation invariants.
void criterion2() {
  Rng rng(77);
  bool pass = true;
  std::string detail;
  for (int inst = 0; inst < 1000 && pass; ++inst) {
    int n = rng.uniform_int(1, 4), h = rng.uniform_int(1, 4), w = rng.uniform_int(1, 4);
    if (n * h * w > 64) continue;
    int k = rng.uniform_int(1, 32), d = rng.uniform_int(1, 16);
    Codebook cb(k, d, rng);
    Tensor z = Tensor::uniform({n, d, h, w}, -1, 1, rng);
    auto q = cb.quantize(z);

    int rows = n * h * w;
    double code_sum = 0, commit_sum = 0;
    for (int r = 0; r < rows; ++r) {
      int bi = r / (h * w), pos = r % (h * w);
      std::vector<double> row(static_cast<size_t>(d));
      for (int c = 0; c < d; ++c)
        row[static_cast<size_t>(c)] = z.value()[(static_cast<size_t>(bi) * d + c) * h * w + pos];
      int best = 0;
      double best_d = 1e300;
      for (int kk = 0; kk < k; ++kk) {
        double dist = 0;
        for (int c = 0; c < d; ++c) {
          double diff = row[static_cast<size_t>(c)] - cb.embeddings().value()[static_cast<size_t>(kk) * d + c];
          dist += diff * diff;
        }
        if (dist < best_d) {
          best_d = dist;
          best = kk;
        }
      }
      if (q.indices[static_cast<size_t>(r)] != best) {
        pass = false;
        detail = "index mismatch at instance " + std::to_string(inst);
        break;
      }
      for (int c = 0; c < d; ++c) {
        double zq = q.z_q.value()[(static_cast<size_t>(bi) * d + c) * h * w + pos];
        double emb = cb.embeddings().value()[static_cast<size_t>(best) * d + c];
        if (zq != emb) {
          pass = false;
          detail = "z_q value mismatch at instance " + std::to_string(inst);
        }
        double diff = row[static_cast<size_t>(c)] - emb;
        code_sum += diff * diff;
        commit_sum += diff * diff;
      }
    }
    if (!pass) break;
    double mean_sq = code_sum / (rows * d);
    if (std::fabs(q.codebook_loss.item() - mean_sq) > 1e-12 ||
        std::fabs(q.commitment_loss.item() - commit_sum / (rows * d)) > 1e-12) {
      pass = false;
      detail = "loss mismatch at instance " + std::to_string(inst);
    }
    for (int64_t i = 0; i < z.numel() && pass; ++i)
      if (q.straight_through.value()[i] != q.z_q.value()[i]) {
        pass = false;
        detail = "straight-through forward differs from z_q";
      }
  }

  // Straight-through identity: gradient through the quantizer equals the
  // gradient applied directly to z.
  if (pass) {
    Rng r2(5);
    Codebook cb(8, 4, r2);
    Tensor z = Tensor::uniform({2, 4, 3, 3}, -1, 1, r2);
    z.set_requires_grad(true);
    std::vector<double> coeffs;
    for (int64_t i = 0; i < z.numel(); ++i) coeffs.push_back(r2.uniform(-1, 1));
    {
      TapeScope scope;
      auto q = cb.quantize(z);
      scope.backward(op::sum(op::mul(q.straight_through, Tensor::from(z.shape(), coeffs))));
    }
    if (z.grad() != coeffs) {
      pass = false;
      detail = "straight-through gradient is not the identity";
    }
    // Separation: commitment reaches only z, codebook loss only embeddings.
    z.zero_grad();
    cb.embeddings().zero_grad();
    {
      TapeScope scope;
      auto q = cb.quantize(z);
      scope.backward(q.commitment_loss);
    }
    bool z_touched = false, e_touched = false;
    for (double g : z.grad()) z_touched |= g != 0;
    for (double g : cb.embeddings().grad()) e_touched |= g != 0;
    if (!z_touched || e_touched) {
      pass = false;
      detail = "commitment loss gradient separation violated";
    }
    z.zero_grad();
    cb.embeddings().zero_grad();
    {
      TapeScope scope;
      auto q = cb.quantize(z);
      scope.backward(q.codebook_loss);
    }
    z_touched = e_touched = false;
    for (double g : z.grad()) z_touched |= g != 0;
    for (double g : cb.embeddings().grad()) e_touched |= g != 0;
    if (z_touched || !e_touched) {
      pass = false;
      detail = "codebook loss gradient separation violated";
    }
  }
  report(2, "quantizer oracle", pass, detail);
}

// 3. Worked-configuration shape contract.
void criterion3() {
  Rng rng(9);
  Codebook cb(1024, 256, rng);
  Tensor z = Tensor::uniform({5, 256, 16, 16}, -1, 1, rng);
  auto q = cb.quantize(z);
  bool pass = q.flattened_shape == std::make_pair(1280, 256) && q.distance_shape == std::make_pair(1280, 1024) &&
              q.z_q.shape() == Shape{5, 256, 16, 16} && q.straight_through.shape() == Shape{5, 256, 16, 16};
  report(3, "shape contract (5,256,16,16) -> (1280,256)/(1280,1024)", pass);
}

ExperimentSpec learning_spec(int seed) {
  ExperimentSpec spec;
  spec.name = "learning";
  spec.codebook_size = 32;
  spec.latent_dim = 8;
  spec.image_count = 16;
  spec.epochs = 200;
  spec.seed = seed;
  spec.model.image_size = 32;
  spec.model.base_channels = 8;
  spec.model.channel_multipliers = {1, 2, 2};
  spec.model.num_downsamples = 2;
  spec.finalize();
  return spec;
}

// 4. Training on the synthetic discs beats the untrained baseline's 10th
// percentile of rec_l1.
void criterion4() {
  auto t0 = std::chrono::steady_clock::now();
  ExperimentSpec spec = learning_spec(3);
  Dataset data = dataset_for_spec(spec);

  // Baseline distribution: rec_l1 of 100 untrained models on the train set.
  std::vector<double> baseline;
  for (int init = 0; init < 100; ++init) {
    VQModel model(spec.model, 10000 + static_cast<uint64_t>(init));
    double total = 0;
    int count = 0;
    for (size_t i = 0; i < data.train.size(); i += 8) {
      size_t end = std::min(i + 8, data.train.size());
      Tensor batch = Tensor::zeros({static_cast<int>(end - i), 3, 32, 32});
      for (size_t j = i; j < end; ++j)
        std::copy(data.train[j].value().begin(), data.train[j].value().end(),
                  batch.mutable_value().begin() + static_cast<int64_t>(j - i) * 3 * 32 * 32);
      auto rec = model.reconstruct(batch, {});
      total += reconstruction_l1(batch, rec.x_hat).item() * static_cast<double>(end - i);
      count += static_cast<int>(end - i);
    }
    baseline.push_back(total / count);
  }
  std::sort(baseline.begin(), baseline.end());
  double p10 = baseline[9];

  TrainResult res = train(spec, data);
  double final_train_l1 = 0;
  for (auto it = res.rows.rbegin(); it != res.rows.rend(); ++it)
    if (it->split == "train") {
      final_train_l1 = it->rec_l1;
      break;
    }
  double secs = elapsed_s(t0);
  bool pass = final_train_l1 < p10 && secs < 600.0;
  char buf[160];
  std::snprintf(buf, sizeof(buf), "final train rec_l1 %.4f vs baseline p10 %.4f, %.0fs", final_train_l1, p10, secs);
  report(4, "learning happens", pass, buf);
}

// 5. Positional-encoding ablation: determinism and schema only.
void criterion5() {
  bool pass = true;
  std::string detail;
  for (int seed : {11, 12}) {
    for (bool pe : {false, true}) {
      ExperimentSpec spec = learning_spec(seed);
      spec.name = std::string("pe_") + (pe ? "on" : "off");
      spec.use_positional_encoding = pe;
      spec.epochs = 3;
      spec.finalize();
      Dataset data = dataset_for_spec(spec);
      TrainResult a = train(spec, data);
      TrainResult b = train(spec, data);
      if (a.metrics_csv != b.metrics_csv) {
        pass = false;
        detail = spec.name + " seed " + std::to_string(seed) + " is not deterministic";
      }
      std::istringstream csv(a.metrics_csv);
      std::string line;
      std::getline(csv, line);
      if (line != kMetricsHeader) {
        pass = false;
        detail = "bad csv header";
      }
      int rows = 0;
      while (std::getline(csv, line)) {
        MetricsRow r = MetricsRow::parse_csv(line);
        if (!std::isfinite(r.vq_core)) {
          pass = false;
          detail = "non-finite vq_core";
        }
        ++rows;
      }
      if (rows != 2 * spec.epochs) {
        pass = false;
        detail = "expected " + std::to_string(2 * spec.epochs) + " rows, got " + std::to_string(rows);
      }
    }
  }
  report(5, "positional-encoding ablation determinism and schema", pass, detail);
}

// 6. PCA exactness against dense-covariance eigenpairs.
void criterion6() {
  bool pass = true;
  std::string detail;
  Rng rng(55);
  int datasets = 0;
  for (int rep = 0; rep < 55 && pass; ++rep) {
    int M = rng.uniform_int(3, 8), S = rng.uniform_int(2, 4);
    int P = S * S;
    std::vector<Tensor> imgs;
    for (int i = 0; i < M; ++i) imgs.push_back(Tensor::uniform({3, S, S}, -1, 1, rng));
    PCAModel m = pca_fit(imgs);
    ++datasets;

    for (const Tensor& img : imgs) {
      Tensor rec = pca_reconstruct(m, img, m.n_max);
      for (int64_t i = 0; i < img.numel(); ++i)
        if (std::fabs(rec.value()[i] - img.value()[i]) >= 1e-6) {
          pass = false;
          detail = "full-rank reconstruction error above 1e-6";
        }
    }

    for (int ch = 0; ch < 3 && pass; ++ch) {
      std::vector<double> mean(static_cast<size_t>(P), 0.0);
      for (const Tensor& img : imgs)
        for (int p = 0; p < P; ++p) mean[static_cast<size_t>(p)] += img.value()[static_cast<size_t>(ch) * P + p];
      for (double& v : mean) v /= M;
      std::vector<double> cov(static_cast<size_t>(P) * P, 0.0);
      double total = 0;
      for (const Tensor& img : imgs)
        for (int p = 0; p < P; ++p) {
          double xp = img.value()[static_cast<size_t>(ch) * P + p] - mean[static_cast<size_t>(p)];
          total += xp * xp / (M - 1);
          for (int q = 0; q < P; ++q)
            cov[static_cast<size_t>(p) * P + q] +=
                xp * (img.value()[static_cast<size_t>(ch) * P + q] - mean[static_cast<size_t>(q)]) / (M - 1);
        }
      const ChannelPCA& c = m.channels[static_cast<size_t>(ch)];
      for (size_t r = 0; r < c.components.size(); ++r) {
        double lambda = c.explained_variance_ratio[r] * total;
        for (int p = 0; p < P; ++p) {
          double cv = 0;
          for (int q = 0; q < P; ++q)
            cv += cov[static_cast<size_t>(p) * P + q] * c.components[r][static_cast<size_t>(q)];
          if (std::fabs(cv - lambda * c.components[r][static_cast<size_t>(p)]) >= 1e-8) {
            pass = false;
            detail = "eigenpair residual above 1e-8";
          }
        }
      }
    }

    // Monotone fidelity in n.
    for (const Tensor& img : imgs) {
      double prev = 1e300;
      for (int n = 1; n <= m.n_max && pass; ++n) {
        Tensor rec = pca_reconstruct(m, img, n);
        double err = 0;
        for (int64_t i = 0; i < img.numel(); ++i) {
          double d = img.value()[i] - rec.value()[i];
          err += d * d;
        }
        if (err > prev + 1e-10) {
          pass = false;
          detail = "fidelity not monotone in n";
        }
        prev = err;
      }
    }
  }
  report(6, "pca exactness on " + std::to_string(datasets) + " random datasets", pass, detail);
}

// 7. Optional real-data PCA comparison.
void criterion7() {
  const char* dir = std::getenv("VQAB_FLOWERS_DIR");
  if (!dir) {
    std::printf("[SKIP] criterion 7: pca real-data comparison (set VQAB_FLOWERS_DIR to enable)\n");
    return;
  }
  std::vector<std::string> names;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_regular_file()) names.push_back(e.path().string());
  std::sort(names.begin(), names.end());
  bool pass = true;
  std::string detail;
  auto run = [&](int count, double expect) {
    if (static_cast<int>(names.size()) < count) {
      detail += "need " + std::to_string(count) + " images; ";
      pass = false;
      return;
    }
    std::vector<Tensor> imgs;
    for (int i = 0; i < count; ++i) {
      ImageU8 img = resize_bilinear(center_crop_square(read_ppm(names[static_cast<size_t>(i)])), 64);
      imgs.push_back(image_to_tensor(img));
    }
    auto rows = variance_report(pca_fit(imgs));
    int n = std::min<int>(50, static_cast<int>(rows.size()));
    double cum = rows[static_cast<size_t>(n - 1)].cumulative;
    if (std::fabs(cum - expect) > 0.02) {
      pass = false;
      char buf[96];
      std::snprintf(buf, sizeof(buf), "%d images: cumulative %.4f vs %.4f; ", count, cum, expect);
      detail += buf;
    }
  };
  run(65, 0.9819);
  run(2700, 0.9835);
  report(7, "pca real-data comparison", pass, detail);
}

// 8. Determinism, checkpoint persistence, loss recomposition.
void criterion8() {
  bool pass = true;
  std::string detail;
  ExperimentSpec spec = learning_spec(21);
  spec.name = "persist";
  spec.epochs = 4;
  // Activate the adversarial path early so lambda and the gan term are
  // exercised by the recomposition assertion inside the trainer.
  spec.weights.disc_start_step = 2;
  spec.finalize();
  Dataset data = dataset_for_spec(spec);

  TrainResult a = train(spec, data);
  TrainResult b = train(spec, data);
  if (a.metrics_csv != b.metrics_csv) {
    pass = false;
    detail = "metrics csv not byte-identical across reruns";
  }
  bool gan_seen = false;
  for (const MetricsRow& r : a.rows) gan_seen |= r.split == "train" && r.lambda != 0;
  if (!gan_seen) {
    pass = false;
    detail += "adversarial path never activated; ";
  }

  fs::path dir = fs::temp_directory_path() / "vqab_acceptance8";
  fs::remove_all(dir);
  fs::create_directories(dir);
  fs::path p1 = dir / "a.vqab", p2 = dir / "b.vqab";
  save_checkpoint(p1.string(), a.checkpoint);
  save_checkpoint(p2.string(), load_checkpoint(p1.string()));
  auto slurp = [](const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
  };
  if (slurp(p1) != slurp(p2)) {
    pass = false;
    detail += "checkpoint save/load/save not byte-identical; ";
  }
  fs::remove_all(dir);

  // The trainer asserts the recomposition identity at 1e-12 on every step
  // and aborts on violation, so reaching this point covers the training
  // path. Re-verify the identity directly on random loss instances.
  Rng rng(31);
  for (int rep = 0; rep < 200; ++rep) {
    GeneratorLossInputs in;
    in.rec_l1 = Tensor::scalar(rng.uniform(0, 2));
    in.rec_mse = Tensor::scalar(rng.uniform(0, 2));
    in.perceptual = Tensor::scalar(rng.uniform(0, 2));
    in.commitment = Tensor::scalar(rng.uniform(0, 2));
    in.codebook = Tensor::scalar(rng.uniform(0, 2));
    in.gan_generator = Tensor::scalar(rng.uniform(-2, 2));
    in.lambda_value = rng.uniform(0, 3);
    LossBreakdown bd = total_generator_loss(in, spec.weights, rng.uniform_int(0, 10));
    if (std::fabs(bd.total_value - bd.recompute_total()) > 1e-12) {
      pass = false;
      detail += "recomposition identity violated; ";
      break;
    }
  }
  report(8, "determinism and persistence", pass, detail);
}

}  // namespace

int main() {
  criterion1();
  criterion2();
  criterion3();
  criterion4();
  criterion5();
  criterion6();
  criterion7();
  criterion8();
  if (g_failures) std::printf("%d criterion(s) failed\n", g_failures);
  return g_failures == 0 ? 0 : 1;
}
