// Copyright 2026 The bnnlip Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "bnnlip/attacks.hpp"
#include "bnnlip/data.hpp"
#include "bnnlip/exec.hpp"
#include "bnnlip/lipschitz.hpp"
#include "bnnlip/mfvi.hpp"

namespace bnnlip {

struct BlobsSpec {
  int n_train = 200, n_test = 100;
  int dim = 2, num_classes = 2;
  double spread = 0.05;
};

struct ExperimentConfig {
  std::string dataset = "blobs"; // mnist | fashion-mnist | blobs
  std::string data_dir; // empty = $BNNLIP_DATA_DIR or ./data
  int train_size = 5000;
  int test_size = 1000;
  std::vector<double> alpha2_grid = {0.01, 0.1, 1.0, 10.0};
  std::vector<std::uint64_t> seeds = {10, 20, 30, 40, 50};
  std::vector<int> hidden_widths = {32, 64, 32};
  std::string activation = "relu";
  TrainConfig train;   // per-cell seed is set by the sweep
  AttackConfig attack;
  int predictive_samples = 100; // T for the frozen predictive
  int lipschitz_samples = 100;  // T for the mean-logit functions
  BlobsSpec blobs;
  std::string out_dir = "runs/out";

  void validate() const;
};

ExperimentConfig load_experiment_config(const std::string& path);
std::string experiment_config_json(const ExperimentConfig& cfg);

/// One row of the report: a single (alpha2, seed) cell. Accuracies are
/// percentages in [0, 100].
struct CellResult {
  std::string dataset;
  double alpha2 = 0.0;
  std::uint64_t seed = 0;
  double train_acc = 0.0;
  double clean_test_acc = 0.0;
  double lip_prior_l2 = 0.0, lip_prior_linf = 0.0;
  double lip_post_l2 = 0.0, lip_post_linf = 0.0;
  double adv_test_loss = 0.0;
  double adv_test_acc = 0.0;
  double net_adv_test_acc = 0.0;
};

/// Train/test split for one cell (seed-deterministic subsets).
struct CellData {
  Dataset train, test;
};

/// Loads the configured dataset pair and cuts the per-seed subsets. For
/// blobs, train and test come from one draw (shared centers) split
/// train-first.
CellData prepare_cell_data(const ExperimentConfig& cfg, const Dataset* full_train,
                           const Dataset* full_test, std::uint64_t seed);

/// Loads the full train/test IDX pair named by cfg (mnist or fashion-mnist).
std::pair<Dataset, Dataset> load_named_dataset(const ExperimentConfig& cfg);

/// Classification accuracy (percent) of a frozen ensemble over a dataset.
double ensemble_accuracy(const PosteriorEnsemble& ens, const Dataset& ds,
                         Exec exec = Exec::parallel);

struct AttackMetrics {
  double adv_loss = 0.0;    // mean judge cross-entropy at x_adv vs true label
  double adv_acc = 0.0;     // percent matching the true label
  double net_adv_acc = 0.0; // percent matching the clean prediction
};
AttackMetrics summarize_attacks(std::span<const AttackResult> results,
                                std::span<const int> labels);

/// train -> accuracies -> Lipschitz estimates -> strongest attacks, for one
/// (alpha2, seed) cell. Deterministic given the config and cell key.
CellResult run_cell(const ExperimentConfig& cfg, double alpha2, std::uint64_t seed,
                    const CellData& data, Exec exec = Exec::parallel,
                    Checkpoint* checkpoint_out = nullptr);

/// Mean and sample standard deviation over rows of one cell group.
struct Aggregate {
  CellResult mean, stddev;
  int count = 0;
};
Aggregate aggregate(std::span<const CellResult> rows);

/// CSV with a fixed documented header, one row per cell plus mean/std rows
/// per (dataset, alpha2) group; byte-stable for identical inputs.
std::string report_csv(std::span<const CellResult> cells);
/// Per-dataset markdown tables: metrics as rows, alpha2 grid as columns,
/// seed means as values.
std::string report_markdown(std::span<const CellResult> cells);

/// Parses per-seed rows back from report_csv output (aggregate rows are
/// skipped).
std::vector<CellResult> parse_report_csv(const std::string& path);

/// Full sweep: every (alpha2, seed) cell in grid order. Writes report.csv,
/// report.md, the resolved config and per-cell posterior checkpoints into
/// cfg.out_dir. A failed cell is reported and skipped; it does not kill the
/// sweep.
std::vector<CellResult> run_sweep(const ExperimentConfig& cfg, Exec exec = Exec::parallel,
                                  std::ostream* log = nullptr);

} // namespace bnnlip
