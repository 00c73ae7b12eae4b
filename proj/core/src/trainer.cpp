#include "vqab/trainer.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <limits>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <thread>

#include "vqab/image.hpp"
#include "vqab/losses.hpp"
#include "vqab/ops.hpp"

namespace fs = std::filesystem;

namespace vqab {

namespace op = ops;

const char* kMetricsHeader =
    "experiment,epoch,split,rec_l1,perceptual,commitment,codebook,vq,vq_core,gan_generator,lambda,total,"
    "codebook_usage_fraction";

std::string MetricsRow::csv() const {
  char buf[512];
  std::snprintf(buf, sizeof(buf), "%s,%d,%s,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g",
                experiment.c_str(), epoch, split.c_str(), rec_l1, perceptual, commitment, codebook, vq, vq_core,
                gan_generator, lambda, total, codebook_usage_fraction);
  return buf;
}

MetricsRow MetricsRow::parse_csv(const std::string& line) {
  std::vector<std::string> cols;
  std::stringstream ss(line);
  std::string item;
  while (std::getline(ss, item, ',')) cols.push_back(item);
  if (cols.size() != 13) throw std::invalid_argument("MetricsRow: expected 13 columns, got " + std::to_string(cols.size()));
  MetricsRow r;
  r.experiment = cols[0];
  r.epoch = std::stoi(cols[1]);
  r.split = cols[2];
  double* fields[] = {&r.rec_l1, &r.perceptual, &r.commitment, &r.codebook,         &r.vq,
                      &r.vq_core, &r.gan_generator, &r.lambda,  &r.total, &r.codebook_usage_fraction};
  for (int i = 0; i < 10; ++i) *fields[i] = std::stod(cols[static_cast<size_t>(i + 3)]);
  return r;
}

namespace {

Tensor stack_batch(const std::vector<Tensor>& images, const std::vector<int>& order, int begin, int end) {
  const Shape& s = images[0].shape();
  Tensor out = Tensor::zeros({end - begin, s[0], s[1], s[2]});
  int64_t per = shape_numel(s);
  for (int i = begin; i < end; ++i) {
    const auto& src = images[static_cast<size_t>(order[static_cast<size_t>(i)])].value();
    std::copy(src.begin(), src.end(), out.mutable_value().begin() + static_cast<int64_t>(i - begin) * per);
  }
  return out;
}

struct EpochAccumulator {
  double rec_l1 = 0, perceptual = 0, commitment = 0, codebook = 0, vq = 0, vq_core = 0, gan = 0, lambda = 0,
         total = 0;
  int images = 0;

  void add(const LossBreakdown& bd, int n) {
    rec_l1 += bd.rec_l1 * n;
    perceptual += bd.perceptual * n;
    commitment += bd.commitment * n;
    codebook += bd.codebook * n;
    vq += bd.vq * n;
    vq_core += bd.vq_core * n;
    gan += bd.gan_generator * n;
    lambda += bd.lambda_value * n;
    total += bd.total_value * n;
    images += n;
  }

  MetricsRow row(const std::string& experiment, int epoch, const std::string& split, double usage) const {
    MetricsRow r;
    r.experiment = experiment;
    r.epoch = epoch;
    r.split = split;
    if (images > 0) {
      r.rec_l1 = rec_l1 / images;
      r.perceptual = perceptual / images;
      r.commitment = commitment / images;
      r.codebook = codebook / images;
      r.vq = vq / images;
      r.vq_core = vq_core / images;
      r.gan_generator = gan / images;
      r.lambda = lambda / images;
      r.total = total / images;
    }
    r.codebook_usage_fraction = usage;
    return r;
  }
};

void check_finite(const LossBreakdown& bd, int64_t step) {
  for (double v : {bd.rec_l1, bd.perceptual, bd.commitment, bd.codebook, bd.gan_generator, bd.lambda_value,
                   bd.total_value})
    if (!std::isfinite(v))
      throw std::runtime_error("train: non-finite loss at step " + std::to_string(step));
}

}  // namespace

Dataset dataset_for_spec(const ExperimentSpec& spec) {
  if (!spec.data_dir.empty())
    return load_dataset(spec.data_dir, spec.image_count, spec.model.image_size, spec.split_fraction,
                        static_cast<uint64_t>(spec.seed));
  std::vector<Tensor> all =
      synthetic_disc_images(spec.image_count, spec.model.image_size, static_cast<uint64_t>(spec.seed));
  Dataset d;
  int train_count = static_cast<int>(spec.image_count * spec.split_fraction);
  for (int i = 0; i < spec.image_count; ++i) {
    std::string name = "synthetic_" + std::to_string(i);
    if (i < train_count) {
      d.train.push_back(all[static_cast<size_t>(i)]);
      d.train_names.push_back(name);
    } else {
      d.val.push_back(all[static_cast<size_t>(i)]);
      d.val_names.push_back(name);
    }
  }
  return d;
}

TrainResult train(const ExperimentSpec& spec, const Dataset& data, const std::string& out_dir) {
  auto t0 = std::chrono::steady_clock::now();
  if (data.train.empty()) throw std::invalid_argument("train: empty training set");
  if (!out_dir.empty()) fs::create_directories(out_dir);

  VQModel model(spec.model, static_cast<uint64_t>(spec.seed));
  AdamConfig adam_cfg;
  adam_cfg.learning_rate = spec.optimizer.learning_rate;
  adam_cfg.beta1 = spec.optimizer.beta1;
  adam_cfg.beta2 = spec.optimizer.beta2;
  Adam gen_opt(model.params(), adam_cfg);

  PatchDiscriminator disc(static_cast<uint64_t>(spec.seed) ^ 0x9e3779b97f4a7c15ull);
  Adam disc_opt(disc.params(), adam_cfg);

  RandomConvExtractor extractor;
  Rng rng(static_cast<uint64_t>(spec.seed) ^ 0xd1b54a32d192ed03ull);

  TrainResult result;
  result.metrics_csv = std::string(kMetricsHeader) + "\n";

  std::vector<int> order(data.train.size());
  std::iota(order.begin(), order.end(), 0);
  int64_t global_step = 0;

  auto eval_losses = [&](const Tensor& batch, bool train_mode, bool disc_active, ForwardCtx ctx, double lambda_value,
                         int64_t step) {
    auto rec = model.reconstruct(batch, ctx);
    GeneratorLossInputs in;
    in.rec_l1 = reconstruction_l1(batch, rec.x_hat);
    in.rec_mse = reconstruction_mse(batch, rec.x_hat);
    in.perceptual = perceptual_distance(batch, rec.x_hat, extractor);
    in.commitment = rec.quant.commitment_loss;
    in.codebook = rec.quant.codebook_loss;
    if (disc_active) in.gan_generator = generator_adversarial_loss(disc.forward(rec.x_hat));
    in.lambda_value = lambda_value;
    (void)train_mode;
    (void)step;
    return std::make_pair(rec, in);
  };

  for (int epoch = 1; epoch <= spec.epochs; ++epoch) {
    shuffle(order, rng);
    model.codebook().reset_usage();
    EpochAccumulator train_acc;

    for (int begin = 0; begin < static_cast<int>(order.size()); begin += spec.batch_size) {
      int end = std::min(begin + spec.batch_size, static_cast<int>(order.size()));
      Tensor batch = stack_batch(data.train, order, begin, end);
      bool disc_active = spec.weights.disc_factor > 0 && global_step >= spec.weights.disc_start_step;

      model.params().zero_grad();
      disc.params().zero_grad();
      LossBreakdown bd;
      Tensor x_hat;
      {
        TapeScope scope;
        ForwardCtx ctx{true, &rng};
        auto [rec, in] = eval_losses(batch, true, disc_active, ctx, 0.0, global_step);
        x_hat = rec.x_hat;

        if (disc_active) {
          // The adaptive weight is measured at the decoder's last conv,
          // holding everything upstream fixed.
          Tensor pen = rec.penultimate.detach();
          auto rec_loss = [&]() {
            Tensor out = model.decoder().conv_out(pen);
            return op::add(op::scale(perceptual_distance(batch, out, extractor), spec.weights.perceptual_factor),
                           op::scale(reconstruction_l1(batch, out), spec.weights.rec_factor));
          };
          auto gan_loss = [&]() {
            Tensor out = model.decoder().conv_out(pen);
            return generator_adversarial_loss(disc.forward(out));
          };
          in.lambda_value = calculate_lambda(rec_loss, gan_loss, model.decoder().last_layer_weight(), spec.weights);
          // Side-tape backwards above touched some parameter grads; clear
          // everything before the real backward.
          model.params().zero_grad();
          disc.params().zero_grad();
        }

        bd = total_generator_loss(in, spec.weights, static_cast<int>(global_step));
        check_finite(bd, global_step);
        if (std::fabs(bd.total_value - bd.recompute_total()) > 1e-12)
          throw std::runtime_error("train: loss recomposition mismatch at step " + std::to_string(global_step));
        scope.backward(bd.total);
      }
      gen_opt.step();

      if (disc_active) {
        disc.params().zero_grad();
        TapeScope scope;
        Tensor hinge = discriminator_hinge_loss(disc.forward(batch), disc.forward(x_hat.detach()));
        if (!std::isfinite(hinge.item()))
          throw std::runtime_error("train: non-finite discriminator loss at step " + std::to_string(global_step));
        scope.backward(hinge);
        disc_opt.step();
      }

      train_acc.add(bd, end - begin);
      ++global_step;
    }
    double train_usage = model.codebook().usage_fraction();
    result.rows.push_back(train_acc.row(spec.name, epoch, "train", train_usage));

    if (!data.val.empty()) {
      model.codebook().reset_usage();
      EpochAccumulator val_acc;
      std::vector<int> val_order(data.val.size());
      std::iota(val_order.begin(), val_order.end(), 0);
      bool disc_active = spec.weights.disc_factor > 0 && global_step >= spec.weights.disc_start_step;
      for (int begin = 0; begin < static_cast<int>(val_order.size()); begin += spec.batch_size) {
        int end = std::min(begin + spec.batch_size, static_cast<int>(val_order.size()));
        Tensor batch = stack_batch(data.val, val_order, begin, end);
        auto [rec, in] = eval_losses(batch, false, disc_active, ForwardCtx{false, nullptr}, 0.0, global_step);
        LossBreakdown bd = total_generator_loss(in, spec.weights, static_cast<int>(global_step));
        check_finite(bd, global_step);
        val_acc.add(bd, end - begin);
      }
      result.rows.push_back(val_acc.row(spec.name, epoch, "val", model.codebook().usage_fraction()));
    }

    for (size_t i = result.rows.size() - (data.val.empty() ? 1 : 2); i < result.rows.size(); ++i)
      result.metrics_csv += result.rows[i].csv() + "\n";

    if (!out_dir.empty() && spec.grid_every > 0 && epoch % spec.grid_every == 0) {
      int n = std::min<int>(4, static_cast<int>(data.train.size()));
      std::vector<Tensor> originals, recons;
      for (int i = 0; i < n; ++i) {
        Tensor batch = Tensor::from({1, 3, spec.model.image_size, spec.model.image_size},
                                    data.train[static_cast<size_t>(i)].value());
        auto rec = model.reconstruct(batch, ForwardCtx{false, nullptr});
        originals.push_back(data.train[static_cast<size_t>(i)]);
        recons.push_back(Tensor::from({3, spec.model.image_size, spec.model.image_size}, rec.x_hat.value()));
      }
      write_ppm((fs::path(out_dir) / ("recon_epoch" + std::to_string(epoch) + ".ppm")).string(),
                side_by_side_grid(originals, recons));
    }
  }

  result.checkpoint = snapshot(spec, model.params(), &gen_opt, spec.epochs, rng);
  auto t1 = std::chrono::steady_clock::now();
  result.wall_seconds = std::chrono::duration<double>(t1 - t0).count();

  if (!out_dir.empty()) {
    fs::create_directories(out_dir);
    std::ofstream csv(fs::path(out_dir) / "metrics.csv", std::ios::binary);
    csv << result.metrics_csv;
    save_checkpoint((fs::path(out_dir) / "checkpoint.vqab").string(), result.checkpoint);
  }
  return result;
}

std::vector<GridSummaryRow> run_grid(const std::vector<ExperimentSpec>& specs, const std::string& out_dir,
                                     int workers) {
  for (size_t i = 0; i < specs.size(); ++i)
    for (size_t j = i + 1; j < specs.size(); ++j)
      if (specs[i].name == specs[j].name)
        throw std::invalid_argument("run_grid: duplicate experiment name '" + specs[i].name + "'");

  std::vector<GridSummaryRow> summary(specs.size());
  std::vector<std::string> errors(specs.size());
  auto run_one = [&](size_t idx) {
    try {
      const ExperimentSpec& spec = specs[idx];
      std::string dir = out_dir.empty() ? "" : (fs::path(out_dir) / spec.name).string();
      if (!dir.empty()) fs::create_directories(dir);
      Dataset data = dataset_for_spec(spec);
      TrainResult res = train(spec, data, dir);
      GridSummaryRow& row = summary[idx];
      row.experiment = spec.name;
      row.epochs = spec.epochs;
      row.wall_seconds = res.wall_seconds;
      row.best_val_vq = row.final_val_vq = std::numeric_limits<double>::quiet_NaN();
      for (const MetricsRow& r : res.rows) {
        if (r.split != "val") continue;
        if (std::isnan(row.best_val_vq) || r.vq < row.best_val_vq) row.best_val_vq = r.vq;
        row.final_val_vq = r.vq;
      }
    } catch (const std::exception& e) {
      errors[idx] = e.what();
    }
  };

  if (workers <= 1 || specs.size() < 2) {
    for (size_t i = 0; i < specs.size(); ++i) run_one(i);
  } else {
    std::vector<std::thread> pool;
    std::atomic<size_t> next{0};
    int n = std::min<int>(workers, static_cast<int>(specs.size()));
    for (int w = 0; w < n; ++w)
      pool.emplace_back([&]() {
        for (size_t i = next.fetch_add(1); i < specs.size(); i = next.fetch_add(1)) run_one(i);
      });
    for (auto& t : pool) t.join();
  }
  for (size_t i = 0; i < specs.size(); ++i)
    if (!errors[i].empty()) throw std::runtime_error("run_grid: experiment '" + specs[i].name + "' failed: " + errors[i]);

  if (!out_dir.empty()) {
    fs::create_directories(out_dir);
    std::ofstream csv(fs::path(out_dir) / "summary.csv", std::ios::binary);
    csv << "experiment,best_val_vq,final_val_vq,epochs,wall_seconds\n";
    char buf[256];
    for (const GridSummaryRow& r : summary) {
      std::snprintf(buf, sizeof(buf), "%s,%.17g,%.17g,%d,%.3f\n", r.experiment.c_str(), r.best_val_vq,
                    r.final_val_vq, r.epochs, r.wall_seconds);
      csv << buf;
    }
  }
  return summary;
}

void reconstruct_cmd(const std::string& checkpoint_path, const std::string& input_dir, const std::string& output_dir) {
  Checkpoint ckpt = load_checkpoint(checkpoint_path);
  VQModel model(ckpt.spec.model, static_cast<uint64_t>(ckpt.spec.seed));
  restore_parameters(ckpt, model.params());

  std::vector<std::string> names;
  for (const auto& entry : fs::directory_iterator(input_dir))
    if (entry.is_regular_file()) names.push_back(entry.path().filename().string());
  std::sort(names.begin(), names.end());
  if (names.empty()) {
    std::cerr << "warning: no input images in " << input_dir << ", nothing to reconstruct\n";
    return;
  }

  int S = ckpt.spec.model.image_size;
  std::vector<Tensor> images;
  for (const std::string& name : names) {
    ImageU8 img = read_ppm((fs::path(input_dir) / name).string());
    img = resize_bilinear(center_crop_square(img), S);
    images.push_back(image_to_tensor(img));
  }

  fs::create_directories(output_dir);
  int grid_index = 0;
  for (size_t begin = 0; begin < images.size(); begin += 4) {
    size_t end = std::min(begin + 4, images.size());
    std::vector<Tensor> originals, recons;
    for (size_t i = begin; i < end; ++i) {
      Tensor batch = Tensor::from({1, 3, S, S}, images[i].value());
      auto rec = model.reconstruct(batch, ForwardCtx{false, nullptr});
      originals.push_back(images[i]);
      recons.push_back(Tensor::from({3, S, S}, rec.x_hat.value()));
    }
    char name[64];
    std::snprintf(name, sizeof(name), "grid_%03d.ppm", grid_index++);
    write_ppm((fs::path(output_dir) / name).string(), side_by_side_grid(originals, recons));
  }
}

}  // namespace vqab
