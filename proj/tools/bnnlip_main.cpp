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

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "bnnlip/harness.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

namespace fs = std::filesystem;
using namespace bnnlip;

namespace {

struct CommonFlags {
  std::string config_path;
  std::string dataset;
  std::string data_dir;
  std::vector<double> alpha2;
  std::vector<std::uint64_t> seeds;
  double epsilon = -1.0;
  int iters = -1;
  int epochs = -1;
  int batch_size = -1;
  double learning_rate = -1.0;
  std::string out_dir;
  bool serial = false;
  int threads = 0;
};

void add_common_flags(CLI::App* cmd, CommonFlags& f) {
  cmd->add_option("--config", f.config_path, "experiment config JSON");
  cmd->add_option("--dataset", f.dataset, "mnist | fashion-mnist | blobs");
  cmd->add_option("--data-dir", f.data_dir, "dataset root (default $BNNLIP_DATA_DIR or ./data)");
  cmd->add_option("--alpha2", f.alpha2, "prior variance grid")->delimiter(',');
  cmd->add_option("--seeds", f.seeds, "experiment seeds")->delimiter(',');
  cmd->add_option("--epsilon", f.epsilon, "attack budget (L-inf)");
  cmd->add_option("--iters", f.iters, "attack iterations");
  cmd->add_option("--epochs", f.epochs, "training epochs");
  cmd->add_option("--batch-size", f.batch_size, "SGD minibatch size");
  cmd->add_option("--lr", f.learning_rate, "SGD learning rate");
  cmd->add_option("--out", f.out_dir, "output directory");
  cmd->add_flag("--serial", f.serial, "run kernels on the serial reference path");
  cmd->add_option("--threads", f.threads, "OpenMP thread count (0 = runtime default)");
}

ExperimentConfig resolve_config(const CommonFlags& f) {
  ExperimentConfig cfg;
  if (!f.config_path.empty()) cfg = load_experiment_config(f.config_path);
  if (!f.dataset.empty()) cfg.dataset = f.dataset;
  if (!f.data_dir.empty()) {
    cfg.data_dir = f.data_dir;
  } else if (cfg.data_dir.empty()) {
    if (const char* env = std::getenv("BNNLIP_DATA_DIR")) cfg.data_dir = env;
  }
  if (!f.alpha2.empty()) cfg.alpha2_grid = f.alpha2;
  if (!f.seeds.empty()) cfg.seeds = f.seeds;
  if (f.epsilon >= 0.0) {
    cfg.attack.epsilon = f.epsilon;
    cfg.attack.step_size = f.epsilon > 0.0 ? f.epsilon / 4.0 : cfg.attack.step_size;
  }
  if (f.iters > 0) cfg.attack.iterations = f.iters;
  if (f.epochs > 0) cfg.train.epochs = f.epochs;
  if (f.batch_size > 0) cfg.train.batch_size = f.batch_size;
  if (f.learning_rate > 0.0) cfg.train.learning_rate = f.learning_rate;
  if (!f.out_dir.empty()) cfg.out_dir = f.out_dir;
  cfg.validate();
#ifdef _OPENMP
  if (f.threads > 0) omp_set_num_threads(f.threads);
#endif
  return cfg;
}

Exec exec_of(const CommonFlags& f) { return f.serial ? Exec::serial : Exec::parallel; }

int cmd_sweep(const CommonFlags& f) {
  const ExperimentConfig cfg = resolve_config(f);
  const auto cells = run_sweep(cfg, exec_of(f), &std::cout);
  std::cout << "wrote " << (fs::path(cfg.out_dir) / "report.csv").string() << " ("
            << cells.size() << " cells)\n";
  return cells.empty() ? 1 : 0;
}

int cmd_train(const CommonFlags& f) {
  const ExperimentConfig cfg = resolve_config(f);
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
  for (double alpha2 : cfg.alpha2_grid) {
    for (std::uint64_t seed : cfg.seeds) {
      const CellData data = prepare_cell_data(cfg, train_ptr, test_ptr, seed);
      Architecture arch;
      arch.input_dim = data.train.dim;
      arch.hidden_widths = cfg.hidden_widths;
      arch.output_dim = data.train.num_classes;
      arch.activation = cfg.activation == "tanh" ? Activation::tanh : Activation::relu;
      TrainConfig tc = cfg.train;
      tc.seed = seed;
      const VariationalPosterior q =
          train_mfvi(arch, data.train, PriorConfig{alpha2}, tc, nullptr, exec_of(f));

      const PosteriorEnsemble ens = PosteriorEnsemble::from_posterior(
          q, cfg.predictive_samples, RngStream(seed, 0).fork(4), arch);
      std::printf("%s alpha2=%g seed=%llu: train=%.2f%% clean=%.2f%%\n", cfg.dataset.c_str(),
                  alpha2, static_cast<unsigned long long>(seed),
                  ensemble_accuracy(ens, data.train, exec_of(f)),
                  ensemble_accuracy(ens, data.test, exec_of(f)));

      Checkpoint ckpt{cfg.dataset, arch, alpha2, tc, q};
      char name[128];
      std::snprintf(name, sizeof name, "%s_a%g_s%llu.json", cfg.dataset.c_str(), alpha2,
                    static_cast<unsigned long long>(seed));
      const std::string path = (fs::path(cfg.out_dir) / "checkpoints" / name).string();
      save_checkpoint(ckpt, path);
      std::cout << "saved " << path << "\n";
    }
  }
  return 0;
}

CellData data_for_checkpoint(const ExperimentConfig& cfg, const Checkpoint& ckpt) {
  ExperimentConfig c = cfg;
  c.dataset = ckpt.dataset_name;
  Dataset full_train, full_test;
  const Dataset *train_ptr = nullptr, *test_ptr = nullptr;
  if (c.dataset != "blobs") {
    std::tie(full_train, full_test) = load_named_dataset(c);
    train_ptr = &full_train;
    test_ptr = &full_test;
  }
  return prepare_cell_data(c, train_ptr, test_ptr, ckpt.train_config.seed);
}

int cmd_attack(const CommonFlags& f, const std::string& checkpoint_path,
               const std::string& points_out) {
  const ExperimentConfig cfg = resolve_config(f);
  const Checkpoint ckpt = load_checkpoint(checkpoint_path);
  const CellData data = data_for_checkpoint(cfg, ckpt);
  const std::uint64_t seed = ckpt.train_config.seed;

  RngStream root(seed, 0);
  const PosteriorEnsemble judge = PosteriorEnsemble::from_posterior(
      ckpt.posterior, cfg.predictive_samples, root.fork(4), ckpt.arch);
  const auto results =
      attack_sweep(ckpt.posterior, data.test, cfg.attack, root.fork(6), ckpt.arch, &judge,
                   exec_of(f));
  const AttackMetrics m = summarize_attacks(results, data.test.labels);
  std::printf("%s alpha2=%g seed=%llu eps=%g iters=%d\n", ckpt.dataset_name.c_str(),
              ckpt.prior_alpha2, static_cast<unsigned long long>(seed), cfg.attack.epsilon,
              cfg.attack.iterations);
  std::printf("adv test loss %.4f | adv test acc %.2f%% | net adv test acc %.2f%%\n", m.adv_loss,
              m.adv_acc, m.net_adv_acc);

  if (!points_out.empty()) {
    std::ofstream out(points_out, std::ios::binary);
    out << "point,variant,success,adv_loss,predicted_class,clean_class,true_label\n";
    for (std::size_t i = 0; i < results.size(); ++i) {
      const AttackResult& r = results[i];
      char buf[160];
      std::snprintf(buf, sizeof buf, "%zu,%s,%d,%.17g,%d,%d,%d\n", i,
                    attack_variant_name(r.variant), r.success ? 1 : 0, r.adv_loss,
                    r.predicted_class, r.clean_class, data.test.labels[i]);
      out << buf;
    }
    std::cout << "wrote " << points_out << "\n";
  }
  return 0;
}

int cmd_lipschitz(const CommonFlags& f, const std::string& checkpoint_path) {
  const ExperimentConfig cfg = resolve_config(f);
  const Checkpoint ckpt = load_checkpoint(checkpoint_path);
  const CellData data = data_for_checkpoint(cfg, ckpt);
  const std::uint64_t seed = ckpt.train_config.seed;

  RngStream root(seed, 0);
  const PosteriorEnsemble post = PosteriorEnsemble::from_posterior(
      ckpt.posterior, cfg.lipschitz_samples, root.fork(4), ckpt.arch);
  const PosteriorEnsemble prior = PosteriorEnsemble::from_prior(
      ckpt.prior_alpha2, cfg.lipschitz_samples, root.fork(5), ckpt.arch);

  const auto post_fn = mean_logit_fn(post);
  const auto prior_fn = mean_logit_fn(prior);
  const Exec exec = exec_of(f);
  std::printf("%s alpha2=%g seed=%llu (empirical over %d test points, T=%d)\n",
              ckpt.dataset_name.c_str(), ckpt.prior_alpha2,
              static_cast<unsigned long long>(seed), data.test.size(), cfg.lipschitz_samples);
  std::printf("prior  L2 %.6g | L-inf %.6g\n",
              empirical_lipschitz(prior_fn, data.test.inputs, data.test.dim, Norm::l2, exec).value,
              empirical_lipschitz(prior_fn, data.test.inputs, data.test.dim, Norm::linf, exec).value);
  std::printf("post   L2 %.6g | L-inf %.6g\n",
              empirical_lipschitz(post_fn, data.test.inputs, data.test.dim, Norm::l2, exec).value,
              empirical_lipschitz(post_fn, data.test.inputs, data.test.dim, Norm::linf, exec).value);

  ParameterVector mean_theta(ckpt.arch);
  std::copy(ckpt.posterior.mean.begin(), ckpt.posterior.mean.end(), mean_theta.flat().begin());
  std::printf("analytic bound at posterior mean (alpha2=%g): %.6g\n", ckpt.prior_alpha2,
              analytic_lipschitz_bound(mean_theta, ckpt.prior_alpha2, ckpt.arch));
  const ParameterVector zeros(ckpt.arch);
  std::printf("analytic bound at zero mean   (alpha2=%g): %.6g\n", ckpt.prior_alpha2,
              analytic_lipschitz_bound(zeros, ckpt.prior_alpha2, ckpt.arch));
  for (const auto& s : layer_norm_summary(mean_theta, ckpt.prior_alpha2, ckpt.arch)) {
    std::printf("  layer: |M|_F=%.6g entries=%lld bound=%.6g\n", s.frobenius,
                static_cast<long long>(s.count), s.bound);
  }
  return 0;
}

int cmd_report(const std::string& in_path, const std::string& out_path) {
  const auto cells = parse_report_csv(in_path);
  const std::string md = report_markdown(cells);
  if (out_path.empty() || out_path == "-") {
    std::cout << md;
  } else {
    std::ofstream out(out_path, std::ios::binary);
    out << md;
    std::cout << "wrote " << out_path << "\n";
  }
  return 0;
}

} // namespace

int main(int argc, char** argv) {
  CLI::App app{"mean-field variational BNN training, Lipschitz estimation and PGD robustness"};
  app.require_subcommand(1);

  CommonFlags sweep_f, train_f, attack_f, lip_f;
  std::string checkpoint_path, points_out, report_in, report_out;

  CLI::App* sweep = app.add_subcommand("sweep", "alpha2 x seed grid with full metrics");
  add_common_flags(sweep, sweep_f);

  CLI::App* train = app.add_subcommand("train", "train posteriors and write checkpoints");
  add_common_flags(train, train_f);

  CLI::App* attack = app.add_subcommand("attack", "attack the test set of a checkpoint");
  add_common_flags(attack, attack_f);
  attack->add_option("--checkpoint", checkpoint_path, "posterior checkpoint")->required();
  attack->add_option("--points-out", points_out, "per-point result CSV");

  CLI::App* lips = app.add_subcommand("lipschitz", "empirical and analytic Lipschitz constants");
  add_common_flags(lips, lip_f);
  lips->add_option("--checkpoint", checkpoint_path, "posterior checkpoint")->required();

  CLI::App* report = app.add_subcommand("report", "render report.csv as markdown");
  report->add_option("--in", report_in, "report.csv path")->required();
  report->add_option("--out", report_out, "output markdown path (default stdout)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (sweep->parsed()) return cmd_sweep(sweep_f);
    if (train->parsed()) return cmd_train(train_f);
    if (attack->parsed()) return cmd_attack(attack_f, checkpoint_path, points_out);
    if (lips->parsed()) return cmd_lipschitz(lip_f, checkpoint_path);
    if (report->parsed()) return cmd_report(report_in, report_out);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
