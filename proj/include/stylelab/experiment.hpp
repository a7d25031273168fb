#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "stylelab/eval.hpp"
#include "stylelab/trainer.hpp"

namespace stylelab {

/// Knobs for one experiment run. Everything that costs wall-clock time
/// (dataset sizes, epochs, corruption grid) is adjustable so the same driver
/// serves both the full CLI runs and quick smoke tests.
struct ExperimentConfig {
  // baseline-vs-styleless | filters-ablation | capacity-ablation
  std::string protocol = "baseline-vs-styleless";
  std::vector<std::uint64_t> seeds = {1, 2, 3, 4, 5};
  std::string out_dir;

  int64_t train_n = 160;
  int64_t test_n = 64;
  std::uint64_t data_seed = 999;  // test scenes are fixed across model seeds

  TrainConfig train;       // template; stage/seed/epochs set by the driver
  int64_t stage1_epochs = 0;  // 0 = trainer default
  int64_t stage2_epochs = 0;
  double stage2_lr = 0.0;  // 0 = same base rate as stage 1

  std::vector<std::string> kinds;  // empty = all corruption kinds
  std::vector<int> severities = {1, 2, 3, 4, 5};

  // Reuse trained checkpoints between runs; "" = <out_dir>/ckpts.
  std::string checkpoint_cache;
  int64_t qualitative_n = 6;  // samples per qualitative PNG grid (0 = none)
  bool write_quals = true;
};

struct ExperimentResult {
  std::vector<std::string> models;    // row order
  std::vector<std::string> datasets;  // column order ("clean", "haze-s3", ...)
  // reports[model][dataset][i] = report for seeds[i]
  std::map<std::string, std::map<std::string, std::vector<MetricsReport>>>
      reports;
  // median mIoU over seeds, percent (0-100)
  std::map<std::string, std::map<std::string, double>> median_miou;
  std::string table_csv;  // path of the written table
};

double median(std::vector<double> v);

/// Trains (or loads cached) model variants for the protocol, evaluates each
/// on the clean test set plus every configured corruption, writes one JSON
/// report per (model, dataset, seed), a CSV table of seed-median mIoU
/// (rows = models, columns = datasets), and qualitative prediction grids.
ExperimentResult run_experiment(const ExperimentConfig& cfg);

}  // namespace stylelab
