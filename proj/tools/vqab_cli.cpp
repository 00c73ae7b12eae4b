#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "CLI11.hpp"
#include "vqab/gradcheck.hpp"
#include "vqab/image.hpp"
#include "vqab/pca.hpp"
#include "vqab/trainer.hpp"

namespace fs = std::filesystem;
using namespace vqab;

namespace {

int cmd_train(const std::string& config_path, int seed_override, const std::string& out_dir) {
  auto specs = load_config(config_path);
  if (specs.size() != 1) {
    std::cerr << "train: config holds " << specs.size() << " experiments; use the grid command\n";
    return 1;
  }
  ExperimentSpec spec = specs[0];
  if (seed_override >= 0) {
    spec.seed = seed_override;
    spec.finalize();
  }
  std::string dir = out_dir.empty() ? ("runs/" + spec.name) : out_dir;
  Dataset data = dataset_for_spec(spec);
  TrainResult res = train(spec, data, dir);
  std::cout << "trained '" << spec.name << "' for " << spec.epochs << " epochs in " << res.wall_seconds
            << "s; artifacts in " << dir << "\n";
  if (!res.rows.empty()) std::cout << "final: " << res.rows.back().csv() << "\n";
  return 0;
}

int cmd_grid(const std::string& config_path, int workers, const std::string& out_dir) {
  auto specs = load_config(config_path);
  std::string dir = out_dir.empty() ? "runs/grid" : out_dir;
  auto summary = run_grid(specs, dir, workers);
  std::cout << "grid of " << summary.size() << " runs complete; summary in " << dir << "/summary.csv\n";
  for (const auto& r : summary)
    std::cout << "  " << r.experiment << ": best val vq " << r.best_val_vq << ", final " << r.final_val_vq << "\n";
  return 0;
}

int cmd_pca(const std::string& train_dir, const std::string& val_dir, int components, const std::string& out_dir) {
  auto load_dir = [](const std::string& dir) {
    std::vector<std::string> names;
    for (const auto& e : fs::directory_iterator(dir))
      if (e.is_regular_file()) names.push_back(e.path().filename().string());
    std::sort(names.begin(), names.end());
    std::vector<Tensor> images;
    for (const auto& n : names) images.push_back(image_to_tensor(read_ppm((fs::path(dir) / n).string())));
    return std::make_pair(names, images);
  };

  auto [train_names, train_images] = load_dir(train_dir);
  PCAModel model = pca_fit(train_images);
  int n = std::min(components, model.n_max);
  if (n < components)
    std::cerr << "warning: only " << model.n_max << " components available, requested " << components << "\n";

  fs::create_directories(out_dir);
  auto report = variance_report(model);
  {
    std::ofstream csv(fs::path(out_dir) / "variance.csv", std::ios::binary);
    csv << variance_report_csv(report);
  }
  double cumulative = report.empty() ? 0.0 : report[static_cast<size_t>(std::min<int>(n, (int)report.size()) - 1)].cumulative;
  std::printf("cumulative explained variance with %d components: %.6f\n", n, cumulative);

  auto [val_names, val_images] = load_dir(val_dir);
  fs::create_directories(fs::path(out_dir) / "reconstructions");
  for (size_t i = 0; i < val_images.size(); ++i) {
    Tensor rec = pca_reconstruct(model, val_images[i], n);
    write_ppm((fs::path(out_dir) / "reconstructions" / val_names[i]).string(), tensor_to_image(rec));
  }
  std::cout << "reconstructed " << val_images.size() << " images into " << out_dir << "/reconstructions\n";
  return 0;
}

int cmd_gradcheck(const std::string& module) {
  auto results = gradcheck::run_gradient_checks(module);
  if (results.empty()) {
    std::cerr << "gradcheck: no checks match module filter '" << module << "'\n";
    return 1;
  }
  bool all_pass = true;
  for (const auto& r : results) {
    std::printf("%-32s %s  max_err=%.3g%s%s\n", r.name.c_str(), r.pass ? "PASS" : "FAIL", r.max_err,
                r.detail.empty() ? "" : "  ", r.detail.c_str());
    all_pass = all_pass && r.pass;
  }
  return all_pass ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Deterministic VQ autoencoder ablation toolkit"};
  app.require_subcommand(1);

  std::string config_path, checkpoint_path, input_dir, output_dir, train_dir, val_dir, out_dir, module;
  int seed = -1, workers = 1, components = 50;

  auto* train_cmd = app.add_subcommand("train", "Train one experiment from a config file");
  train_cmd->add_option("--config", config_path, "Experiment config file")->required()->check(CLI::ExistingFile);
  train_cmd->add_option("--seed", seed, "Override the config seed");
  train_cmd->add_option("--out-dir", out_dir, "Artifact directory (default runs/<name>)");

  auto* grid_cmd = app.add_subcommand("grid", "Run every experiment in a grid config");
  grid_cmd->add_option("--config", config_path, "Grid config file")->required()->check(CLI::ExistingFile);
  grid_cmd->add_option("--workers", workers, "Parallel runs")->check(CLI::PositiveNumber);
  grid_cmd->add_option("--out-dir", out_dir, "Artifact directory (default runs/grid)");

  auto* rec_cmd = app.add_subcommand("reconstruct", "Reconstruct a directory of images with a checkpoint");
  rec_cmd->add_option("--checkpoint", checkpoint_path, "Checkpoint file")->required()->check(CLI::ExistingFile);
  rec_cmd->add_option("--input-dir", input_dir, "Input image directory")->required()->check(CLI::ExistingDirectory);
  rec_cmd->add_option("--output-dir", output_dir, "Output directory")->required();

  auto* pca_cmd = app.add_subcommand("pca", "PCA baseline: fit, variance report, reconstructions");
  pca_cmd->add_option("--train-dir", train_dir, "Training images")->required()->check(CLI::ExistingDirectory);
  pca_cmd->add_option("--val-dir", val_dir, "Images to reconstruct")->required()->check(CLI::ExistingDirectory);
  pca_cmd->add_option("--components", components, "Components kept")->check(CLI::PositiveNumber);
  pca_cmd->add_option("--out", out_dir, "Output directory")->required();

  auto* gc_cmd = app.add_subcommand("gradcheck", "Finite-difference gradient suite");
  gc_cmd->add_option("--module", module, "Name prefix filter (tensor, blocks, pos, losses)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (app.got_subcommand(train_cmd)) return cmd_train(config_path, seed, out_dir);
    if (app.got_subcommand(grid_cmd)) return cmd_grid(config_path, workers, out_dir);
    if (app.got_subcommand(rec_cmd)) {
      reconstruct_cmd(checkpoint_path, input_dir, output_dir);
      return 0;
    }
    if (app.got_subcommand(pca_cmd)) return cmd_pca(train_dir, val_dir, components, out_dir);
    if (app.got_subcommand(gc_cmd)) return cmd_gradcheck(module);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
