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

#include "bnnlip/harness.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <ostream>
#include <sstream>

#include <json.hpp>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace bnnlip {

namespace {

namespace fs = std::filesystem;

// cell-level substreams under RngStream(seed, 0); train_mfvi owns ids 1..3
// and 7 (trace)
constexpr std::uint64_t kPredictiveEnsembleStream = 4;
constexpr std::uint64_t kPriorEnsembleStream = 5;
constexpr std::uint64_t kAttackStream = 6;
constexpr std::uint64_t kLipschitzEnsembleStream = 8;

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string fmt4(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.4g", v);
  return buf;
}

Architecture arch_for(const ExperimentConfig& cfg, const Dataset& train) {
  Architecture arch;
  arch.input_dim = train.dim;
  arch.hidden_widths = cfg.hidden_widths;
  arch.output_dim = train.num_classes;
  if (cfg.activation == "relu") {
    arch.activation = Activation::relu;
  } else if (cfg.activation == "tanh") {
    arch.activation = Activation::tanh;
  } else {
    throw std::invalid_argument("unknown activation '" + cfg.activation + "'");
  }
  arch.validate();
  return arch;
}

} // namespace

void ExperimentConfig::validate() const {
  if (dataset != "mnist" && dataset != "fashion-mnist" && dataset != "blobs") {
    throw std::invalid_argument("unknown dataset '" + dataset + "'");
  }
  if (alpha2_grid.empty()) throw std::invalid_argument("alpha2 grid must not be empty");
  for (double a2 : alpha2_grid) {
    if (!(a2 > 0.0)) throw std::invalid_argument("alpha2 values must be positive");
  }
  if (seeds.empty()) throw std::invalid_argument("seed list must not be empty");
  if (train_size < 1 || test_size < 1) throw std::invalid_argument("subset sizes must be >= 1");
  if (predictive_samples < 1 || lipschitz_samples < 1) {
    throw std::invalid_argument("sample counts must be >= 1");
  }
  train.validate();
  attack.validate();
}

ExperimentConfig load_experiment_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config " + path);
  nlohmann::json j;
  in >> j;
  ExperimentConfig cfg;
  cfg.dataset = j.value("dataset", cfg.dataset);
  cfg.data_dir = j.value("data_dir", cfg.data_dir);
  cfg.train_size = j.value("train_size", cfg.train_size);
  cfg.test_size = j.value("test_size", cfg.test_size);
  cfg.alpha2_grid = j.value("alpha2_grid", cfg.alpha2_grid);
  cfg.seeds = j.value("seeds", cfg.seeds);
  cfg.hidden_widths = j.value("hidden_widths", cfg.hidden_widths);
  cfg.activation = j.value("activation", cfg.activation);
  cfg.predictive_samples = j.value("predictive_samples", cfg.predictive_samples);
  cfg.lipschitz_samples = j.value("lipschitz_samples", cfg.lipschitz_samples);
  cfg.out_dir = j.value("out_dir", cfg.out_dir);
  if (j.contains("train")) {
    const auto& t = j["train"];
    cfg.train.epochs = t.value("epochs", cfg.train.epochs);
    cfg.train.batch_size = t.value("batch_size", cfg.train.batch_size);
    cfg.train.learning_rate = t.value("learning_rate", cfg.train.learning_rate);
    cfg.train.elbo_mc_samples = t.value("elbo_mc_samples", cfg.train.elbo_mc_samples);
  }
  if (j.contains("attack")) {
    const auto& a = j["attack"];
    cfg.attack.epsilon = a.value("epsilon", cfg.attack.epsilon);
    cfg.attack.iterations = a.value("iterations", cfg.attack.iterations);
    cfg.attack.step_size = a.value("step_size", cfg.attack.step_size);
    cfg.attack.mc_samples = a.value("mc_samples", cfg.attack.mc_samples);
    cfg.attack.box_lo = a.value("box_lo", cfg.attack.box_lo);
    cfg.attack.box_hi = a.value("box_hi", cfg.attack.box_hi);
  }
  if (j.contains("blobs")) {
    const auto& b = j["blobs"];
    cfg.blobs.n_train = b.value("n_train", cfg.blobs.n_train);
    cfg.blobs.n_test = b.value("n_test", cfg.blobs.n_test);
    cfg.blobs.dim = b.value("dim", cfg.blobs.dim);
    cfg.blobs.num_classes = b.value("num_classes", cfg.blobs.num_classes);
    cfg.blobs.spread = b.value("spread", cfg.blobs.spread);
  }
  cfg.validate();
  return cfg;
}

std::string experiment_config_json(const ExperimentConfig& cfg) {
  nlohmann::json j;
  j["dataset"] = cfg.dataset;
  j["data_dir"] = cfg.data_dir;
  j["train_size"] = cfg.train_size;
  j["test_size"] = cfg.test_size;
  j["alpha2_grid"] = cfg.alpha2_grid;
  j["seeds"] = cfg.seeds;
  j["hidden_widths"] = cfg.hidden_widths;
  j["activation"] = cfg.activation;
  j["train"] = {{"epochs", cfg.train.epochs},
                {"batch_size", cfg.train.batch_size},
                {"learning_rate", cfg.train.learning_rate},
                {"elbo_mc_samples", cfg.train.elbo_mc_samples}};
  j["attack"] = {{"epsilon", cfg.attack.epsilon},   {"iterations", cfg.attack.iterations},
                 {"step_size", cfg.attack.step_size}, {"mc_samples", cfg.attack.mc_samples},
                 {"box_lo", cfg.attack.box_lo},     {"box_hi", cfg.attack.box_hi}};
  j["predictive_samples"] = cfg.predictive_samples;
  j["lipschitz_samples"] = cfg.lipschitz_samples;
  j["blobs"] = {{"n_train", cfg.blobs.n_train},
                {"n_test", cfg.blobs.n_test},
                {"dim", cfg.blobs.dim},
                {"num_classes", cfg.blobs.num_classes},
                {"spread", cfg.blobs.spread}};
  j["out_dir"] = cfg.out_dir;
  return j.dump(2) + "\n";
}

std::pair<Dataset, Dataset> load_named_dataset(const ExperimentConfig& cfg) {
  const fs::path root = fs::path(cfg.data_dir.empty() ? "data" : cfg.data_dir) / cfg.dataset;
  Dataset train = load_idx((root / "train-images-idx3-ubyte").string(),
                           (root / "train-labels-idx1-ubyte").string());
  Dataset test = load_idx((root / "t10k-images-idx3-ubyte").string(),
                          (root / "t10k-labels-idx1-ubyte").string());
  train.name = cfg.dataset + "-train";
  test.name = cfg.dataset + "-test";
  return {std::move(train), std::move(test)};
}

CellData prepare_cell_data(const ExperimentConfig& cfg, const Dataset* full_train,
                           const Dataset* full_test, std::uint64_t seed) {
  CellData cell;
  if (cfg.dataset == "blobs") {
    const BlobsSpec& b = cfg.blobs;
    const Dataset all =
        synthetic_blobs(b.n_train + b.n_test, b.dim, b.num_classes, b.spread, seed);
    cell.train.name = "blobs-train";
    cell.test.name = "blobs-test";
    cell.train.dim = cell.test.dim = all.dim;
    cell.train.num_classes = cell.test.num_classes = all.num_classes;
    cell.train.inputs.assign(all.inputs.begin(),
                             all.inputs.begin() + static_cast<std::size_t>(b.n_train) * all.dim);
    cell.train.labels.assign(all.labels.begin(), all.labels.begin() + b.n_train);
    cell.test.inputs.assign(all.inputs.begin() + static_cast<std::size_t>(b.n_train) * all.dim,
                            all.inputs.end());
    cell.test.labels.assign(all.labels.begin() + b.n_train, all.labels.end());
    return cell;
  }
  if (!full_train || !full_test) {
    throw std::invalid_argument("prepare_cell_data: IDX datasets not loaded");
  }
  cell.train = subset(*full_train, cfg.train_size, seed);
  cell.test = subset(*full_test, cfg.test_size, seed);
  return cell;
}

double ensemble_accuracy(const PosteriorEnsemble& ens, const Dataset& ds, Exec exec) {
  const int n = ds.size();
  std::vector<unsigned char> hit(n, 0);
#ifdef _OPENMP
#pragma omp parallel if (exec == Exec::parallel)
#endif
  {
    Workspace ws(ens.arch());
#ifdef _OPENMP
#pragma omp for schedule(static)
#endif
    for (int i = 0; i < n; ++i) {
      hit[i] = ens.predict(ds.input(i), ws) == ds.labels[i];
    }
  }
  long correct = 0;
  for (unsigned char h : hit) correct += h;
  return 100.0 * static_cast<double>(correct) / static_cast<double>(n);
}

AttackMetrics summarize_attacks(std::span<const AttackResult> results,
                                std::span<const int> labels) {
  AttackMetrics m;
  const double n = static_cast<double>(results.size());
  long adv_ok = 0, net_ok = 0;
  for (std::size_t i = 0; i < results.size(); ++i) {
    m.adv_loss += results[i].adv_loss;
    adv_ok += results[i].predicted_class == labels[i];
    net_ok += !results[i].success;
  }
  m.adv_loss /= n;
  m.adv_acc = 100.0 * static_cast<double>(adv_ok) / n;
  m.net_adv_acc = 100.0 * static_cast<double>(net_ok) / n;
  return m;
}

CellResult run_cell(const ExperimentConfig& cfg, double alpha2, std::uint64_t seed,
                    const CellData& data, Exec exec, Checkpoint* checkpoint_out) {
  const Architecture arch = arch_for(cfg, data.train);
  TrainConfig tc = cfg.train;
  tc.seed = seed;
  const PriorConfig prior{alpha2};

  const VariationalPosterior q = train_mfvi(arch, data.train, prior, tc, nullptr, exec);
  if (checkpoint_out) {
    checkpoint_out->dataset_name = cfg.dataset;
    checkpoint_out->arch = arch;
    checkpoint_out->prior_alpha2 = alpha2;
    checkpoint_out->train_config = tc;
    checkpoint_out->posterior = q;
  }

  RngStream root(seed, 0);
  const PosteriorEnsemble predictive_ens = PosteriorEnsemble::from_posterior(
      q, cfg.predictive_samples, root.fork(kPredictiveEnsembleStream), arch);
  const PosteriorEnsemble* lipschitz_ens = &predictive_ens;
  std::optional<PosteriorEnsemble> separate;
  if (cfg.lipschitz_samples != cfg.predictive_samples) {
    separate = PosteriorEnsemble::from_posterior(q, cfg.lipschitz_samples,
                                                 root.fork(kLipschitzEnsembleStream), arch);
    lipschitz_ens = &*separate;
  }
  const PosteriorEnsemble prior_ens = PosteriorEnsemble::from_prior(
      alpha2, cfg.lipschitz_samples, root.fork(kPriorEnsembleStream), arch);

  CellResult row;
  row.dataset = cfg.dataset;
  row.alpha2 = alpha2;
  row.seed = seed;
  row.train_acc = ensemble_accuracy(predictive_ens, data.train, exec);
  row.clean_test_acc = ensemble_accuracy(predictive_ens, data.test, exec);

  const auto prior_fn = mean_logit_fn(prior_ens);
  const auto post_fn = mean_logit_fn(*lipschitz_ens);
  row.lip_prior_l2 =
      empirical_lipschitz(prior_fn, data.test.inputs, data.test.dim, Norm::l2, exec).value;
  row.lip_prior_linf =
      empirical_lipschitz(prior_fn, data.test.inputs, data.test.dim, Norm::linf, exec).value;
  row.lip_post_l2 =
      empirical_lipschitz(post_fn, data.test.inputs, data.test.dim, Norm::l2, exec).value;
  row.lip_post_linf =
      empirical_lipschitz(post_fn, data.test.inputs, data.test.dim, Norm::linf, exec).value;

  const auto attacks =
      attack_sweep(q, data.test, cfg.attack, root.fork(kAttackStream), arch, &predictive_ens, exec);
  const AttackMetrics am = summarize_attacks(attacks, data.test.labels);
  row.adv_test_loss = am.adv_loss;
  row.adv_test_acc = am.adv_acc;
  row.net_adv_test_acc = am.net_adv_acc;
  return row;
}

Aggregate aggregate(std::span<const CellResult> rows) {
  if (rows.empty()) throw std::invalid_argument("aggregate: need at least one row");
  Aggregate agg;
  agg.count = static_cast<int>(rows.size());
  agg.mean = rows[0];
  agg.stddev = rows[0];
  constexpr std::array<double CellResult::*, 9> kMetrics = {
      &CellResult::train_acc,     &CellResult::clean_test_acc, &CellResult::lip_prior_l2,
      &CellResult::lip_prior_linf, &CellResult::lip_post_l2,    &CellResult::lip_post_linf,
      &CellResult::adv_test_loss, &CellResult::adv_test_acc,   &CellResult::net_adv_test_acc};
  for (auto member : kMetrics) {
    double sum = 0.0;
    for (const CellResult& r : rows) sum += r.*member;
    const double mu = sum / agg.count;
    double sq = 0.0;
    for (const CellResult& r : rows) sq += (r.*member - mu) * (r.*member - mu);
    agg.mean.*member = mu;
    agg.stddev.*member = agg.count > 1 ? std::sqrt(sq / (agg.count - 1)) : 0.0;
  }
  return agg;
}

namespace {

const char* kCsvHeader =
    "dataset,alpha2,seed,train_acc,clean_test_acc,lip_prior_l2,lip_prior_linf,"
    "lip_post_l2,lip_post_linf,adv_test_loss,adv_test_acc,net_adv_test_acc";

void append_row(std::string& out, const CellResult& r, const std::string& seed_field) {
  out += r.dataset;
  out += ',';
  out += fmt(r.alpha2);
  out += ',';
  out += seed_field;
  for (double v : {r.train_acc, r.clean_test_acc, r.lip_prior_l2, r.lip_prior_linf,
                   r.lip_post_l2, r.lip_post_linf, r.adv_test_loss, r.adv_test_acc,
                   r.net_adv_test_acc}) {
    out += ',';
    out += fmt(v);
  }
  out += '\n';
}

} // namespace

std::string report_csv(std::span<const CellResult> cells) {
  std::string out = kCsvHeader;
  out += '\n';
  for (const CellResult& r : cells) append_row(out, r, std::to_string(r.seed));

  // aggregate rows per (dataset, alpha2), in first-appearance order
  std::vector<std::pair<std::string, double>> groups;
  for (const CellResult& r : cells) {
    const auto key = std::make_pair(r.dataset, r.alpha2);
    if (std::find(groups.begin(), groups.end(), key) == groups.end()) groups.push_back(key);
  }
  for (const auto& [ds, a2] : groups) {
    std::vector<CellResult> rows;
    for (const CellResult& r : cells) {
      if (r.dataset == ds && r.alpha2 == a2) rows.push_back(r);
    }
    const Aggregate agg = aggregate(rows);
    append_row(out, agg.mean, "mean");
    append_row(out, agg.stddev, "std");
  }
  return out;
}

std::string report_markdown(std::span<const CellResult> cells) {
  std::string out;
  std::vector<std::string> datasets;
  for (const CellResult& r : cells) {
    if (std::find(datasets.begin(), datasets.end(), r.dataset) == datasets.end()) {
      datasets.push_back(r.dataset);
    }
  }
  for (const std::string& ds : datasets) {
    std::vector<double> grid;
    for (const CellResult& r : cells) {
      if (r.dataset == ds && std::find(grid.begin(), grid.end(), r.alpha2) == grid.end()) {
        grid.push_back(r.alpha2);
      }
    }
    std::vector<CellResult> means;
    for (double a2 : grid) {
      std::vector<CellResult> rows;
      for (const CellResult& r : cells) {
        if (r.dataset == ds && r.alpha2 == a2) rows.push_back(r);
      }
      means.push_back(aggregate(rows).mean);
    }

    out += "## " + ds + " (seed means)\n\n";
    out += "| Metric |";
    for (double a2 : grid) out += " " + fmt4(a2) + " |";
    out += "\n|---|";
    for (std::size_t i = 0; i < grid.size(); ++i) out += "---|";
    out += "\n";
    const std::array<std::pair<const char*, double CellResult::*>, 9> rows = {{
        {"Training Acc.", &CellResult::train_acc},
        {"Clean Test Acc.", &CellResult::clean_test_acc},
        {"L2 prior Lip. const.", &CellResult::lip_prior_l2},
        {"L-inf prior Lip. const.", &CellResult::lip_prior_linf},
        {"L2 post. Lip. const.", &CellResult::lip_post_l2},
        {"L-inf post. Lip. const.", &CellResult::lip_post_linf},
        {"Adv. Test Loss", &CellResult::adv_test_loss},
        {"Adv. Test Acc.", &CellResult::adv_test_acc},
        {"Net Adv. Test Acc.", &CellResult::net_adv_test_acc},
    }};
    for (const auto& [label, member] : rows) {
      out += "| ";
      out += label;
      out += " |";
      for (const CellResult& m : means) out += " " + fmt4(m.*member) + " |";
      out += "\n";
    }
    out += "\n";
  }
  return out;
}

std::vector<CellResult> parse_report_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open report " + path);
  std::string line;
  if (!std::getline(in, line) || line != kCsvHeader) {
    throw std::runtime_error("unexpected report header in " + path);
  }
  std::vector<CellResult> cells;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    std::string tok;
    while (std::getline(ss, tok, ',')) f.push_back(tok);
    if (f.size() != 12) throw std::runtime_error("malformed report row: " + line);
    if (f[2] == "mean" || f[2] == "std") continue;
    CellResult r;
    r.dataset = f[0];
    r.alpha2 = std::stod(f[1]);
    r.seed = std::stoull(f[2]);
    r.train_acc = std::stod(f[3]);
    r.clean_test_acc = std::stod(f[4]);
    r.lip_prior_l2 = std::stod(f[5]);
    r.lip_prior_linf = std::stod(f[6]);
    r.lip_post_l2 = std::stod(f[7]);
    r.lip_post_linf = std::stod(f[8]);
    r.adv_test_loss = std::stod(f[9]);
    r.adv_test_acc = std::stod(f[10]);
    r.net_adv_test_acc = std::stod(f[11]);
    cells.push_back(std::move(r));
  }
  return cells;
}

std::vector<CellResult> run_sweep(const ExperimentConfig& cfg, Exec exec, std::ostream* log) {
  cfg.validate();
  fs::create_directories(cfg.out_dir);
  fs::create_directories(fs::path(cfg.out_dir) / "checkpoints");
  {
    std::ofstream out(fs::path(cfg.out_dir) / "config.json");
    out << experiment_config_json(cfg);
  }

  Dataset full_train, full_test;
  const Dataset *train_ptr = nullptr, *test_ptr = nullptr;
  if (cfg.dataset != "blobs") {
    std::tie(full_train, full_test) = load_named_dataset(cfg);
    train_ptr = &full_train;
    test_ptr = &full_test;
  }

  std::vector<CellResult> cells;
  for (double alpha2 : cfg.alpha2_grid) {
    for (std::uint64_t seed : cfg.seeds) {
      try {
        const CellData data = prepare_cell_data(cfg, train_ptr, test_ptr, seed);
        Checkpoint ckpt;
        const CellResult row = run_cell(cfg, alpha2, seed, data, exec, &ckpt);
        char name[128];
        std::snprintf(name, sizeof name, "%s_a%g_s%llu.json", cfg.dataset.c_str(), alpha2,
                      static_cast<unsigned long long>(seed));
        save_checkpoint(ckpt, (fs::path(cfg.out_dir) / "checkpoints" / name).string());
        cells.push_back(row);
        if (log) {
          *log << cfg.dataset << " alpha2=" << alpha2 << " seed=" << seed
               << ": train=" << row.train_acc << "% clean=" << row.clean_test_acc
               << "% adv_loss=" << row.adv_test_loss << " net_adv=" << row.net_adv_test_acc
               << "%\n";
        }
      } catch (const std::exception& e) {
        if (log) {
          *log << "cell (alpha2=" << alpha2 << ", seed=" << seed << ") failed: " << e.what()
               << "\n";
        }
      }
    }
  }

  {
    std::ofstream out(fs::path(cfg.out_dir) / "report.csv", std::ios::binary);
    out << report_csv(cells);
  }
  {
    std::ofstream out(fs::path(cfg.out_dir) / "report.md", std::ios::binary);
    out << report_markdown(cells);
  }
  return cells;
}

} // namespace bnnlip
