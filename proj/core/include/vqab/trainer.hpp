#pragma once

#include <string>
#include <vector>

#include "vqab/checkpoint.hpp"
#include "vqab/config.hpp"
#include "vqab/dataset.hpp"

namespace vqab {

extern const char* kMetricsHeader;

struct MetricsRow {
  std::string experiment;
  int epoch = 0;
  std::string split;  // "train" or "val"
  double rec_l1 = 0, perceptual = 0, commitment = 0, codebook = 0, vq = 0, vq_core = 0, gan_generator = 0,
         lambda = 0, total = 0, codebook_usage_fraction = 0;

  std::string csv() const;
  static MetricsRow parse_csv(const std::string& line);
};

struct TrainResult {
  Checkpoint checkpoint;
  std::vector<MetricsRow> rows;
  std::string metrics_csv;  // header plus one line per row
  double wall_seconds = 0;
};

/// Builds the spec's dataset: images from data_dir, or the seeded synthetic
/// disc set when data_dir is empty.
Dataset dataset_for_spec(const ExperimentSpec& spec);

/// Full deterministic training run. When out_dir is non-empty, writes
/// metrics.csv, checkpoint.vqab and periodic reconstruction grids there.
TrainResult train(const ExperimentSpec& spec, const Dataset& data, const std::string& out_dir = "");

struct GridSummaryRow {
  std::string experiment;
  double best_val_vq = 0;
  double final_val_vq = 0;
  int epochs = 0;
  double wall_seconds = 0;
};

/// Runs every spec (optionally on parallel workers), one artifact directory
/// per run, then writes summary.csv. Runs share nothing mutable.
std::vector<GridSummaryRow> run_grid(const std::vector<ExperimentSpec>& specs, const std::string& out_dir,
                                     int workers = 1);

/// Loads a checkpoint and writes side-by-side reconstruction grids (rows of
/// originals followed by their reconstructions) for every image in
/// input_dir.
void reconstruct_cmd(const std::string& checkpoint_path, const std::string& input_dir, const std::string& output_dir);

}  // namespace vqab
