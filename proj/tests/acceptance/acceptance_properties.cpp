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

// Self-contained acceptance suite: numerical contracts that need no external
// datasets. One PASS/FAIL line per criterion; exits nonzero if any fail.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "bnnlip/attacks.hpp"
#include "bnnlip/harness.hpp"
#include "bnnlip/lipschitz.hpp"
#include "bnnlip/mfvi.hpp"
#include "bnnlip/network.hpp"
#include "bnnlip/rng.hpp"

using namespace bnnlip;
namespace fs = std::filesystem;

namespace {

int g_failures = 0;

void verdict(int id, bool pass, const std::string& what, const std::string& detail) {
  std::printf("CRITERION %2d [%s] %s (%s)\n", id, pass ? "PASS" : "FAIL", what.c_str(),
              detail.c_str());
  if (!pass) ++g_failures;
}

double rel_err(double a, double b) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-12});
}

double elapsed_s(const std::chrono::steady_clock::time_point& t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt(const char* f, double a, double b = 0.0, double c = 0.0) {
  char buf[160];
  std::snprintf(buf, sizeof buf, f, a, b, c);
  return buf;
}

double log_normal_density(double x, double mean, double var) {
  return -0.5 * (std::log(2.0 * M_PI * var) + (x - mean) * (x - mean) / var);
}

// --- criterion 5: closed-form KL against Monte-Carlo integration -----------

void criterion_5() {
  const auto t0 = std::chrono::steady_clock::now();
  RngStream rng(505, 0);
  double worst = 0.0;
  bool pass = true;
  for (int cfg = 0; cfg < 20; ++cfg) {
    const int dim = 1 + static_cast<int>(rng.next_below(10));
    VariationalPosterior q;
    q.mean.resize(dim);
    q.rho.resize(dim);
    for (double& v : q.mean) v = rng.next_uniform(-2.0, 2.0);
    for (double& v : q.rho) v = softplus_inverse(std::sqrt(rng.next_uniform(0.1, 3.0)));
    const double a2 = rng.next_uniform(0.1, 5.0);
    const double closed = kl_diag_gaussian(q, {a2});

    RngStream mc_rng = rng.fork(1000 + cfg);
    const int n = 1'000'000;
    std::vector<double> eps(dim);
    double acc = 0.0;
    for (int i = 0; i < n; ++i) {
      mc_rng.fill_normal(eps);
      double term = 0.0;
      for (int k = 0; k < dim; ++k) {
        const double s = q.variance(k);
        const double theta = q.mean[k] + std::sqrt(s) * eps[k];
        term += log_normal_density(theta, q.mean[k], s) - log_normal_density(theta, 0.0, a2);
      }
      acc += term;
    }
    const double mc = acc / n;
    const double err = rel_err(closed, mc);
    worst = std::max(worst, err);
    pass &= err < 0.01;
  }
  const double secs = elapsed_s(t0);
  pass &= secs <= 60.0;
  verdict(5, pass, "closed-form KL matches 1e6-sample MC within 1% on 20 configs",
          fmt("max rel err %.2e, %.1f s", worst, secs));
}

// --- criterion 6: reverse-mode gradients against finite differences --------

// local forward replica used only to detect relu kinks inside the stencil
double min_abs_preact(const Architecture& arch, const ParameterVector& theta,
                      std::span<const double> x) {
  std::vector<double> h(x.begin(), x.end());
  double min_abs = 1e300;
  for (int l = 0; l < arch.depth(); ++l) {
    const int out = arch.layer_output(l), in = arch.layer_input(l);
    std::vector<double> z(out);
    for (int o = 0; o < out; ++o) {
      double acc = theta.bias(l)[o];
      for (int i = 0; i < in; ++i) acc += theta.weights(l)[static_cast<std::size_t>(o) * in + i] * h[i];
      z[o] = acc;
      if (l < arch.depth() - 1) min_abs = std::min(min_abs, std::abs(acc));
    }
    if (l < arch.depth() - 1) {
      for (double& v : z) v = arch.activation == Activation::relu ? std::max(0.0, v) : std::tanh(v);
    }
    h = std::move(z);
  }
  return min_abs;
}

double net_loss(const Architecture& arch, const ParameterVector& theta, std::span<const double> x,
                int label) {
  return cross_entropy(softmax(forward_logits(theta, x, arch)), label);
}

void criterion_6() {
  const auto t0 = std::chrono::steady_clock::now();
  RngStream rng(606, 0);
  const double h = 1e-5;
  double worst = 0.0;
  bool pass = true;
  int checked = 0, skipped = 0;

  for (int trial = 0; trial < 100; ++trial) {
    Architecture arch;
    arch.input_dim = 2 + static_cast<int>(rng.next_below(4));
    const int layers = 1 + static_cast<int>(rng.next_below(2));
    for (int l = 0; l < layers; ++l) {
      arch.hidden_widths.push_back(2 + static_cast<int>(rng.next_below(5)));
    }
    arch.output_dim = 2 + static_cast<int>(rng.next_below(3));
    arch.activation = trial % 2 == 0 ? Activation::relu : Activation::tanh;
    arch.validate();

    ParameterVector theta(arch);
    for (double& v : theta.flat()) v = 0.8 * rng.next_normal();
    std::vector<double> x(arch.input_dim);
    for (double& v : x) v = rng.next_uniform();
    const int label = static_cast<int>(rng.next_below(arch.output_dim));

    const auto gp = grad_params(theta, x, label, arch);
    for (std::size_t j = 0; j < theta.size(); ++j) {
      ParameterVector tp = theta, tm = theta;
      tp.flat()[j] += h;
      tm.flat()[j] -= h;
      if (arch.activation == Activation::relu &&
          std::min(min_abs_preact(arch, tp, x), min_abs_preact(arch, tm, x)) < 1e-6) {
        ++skipped;
        continue;
      }
      const double fd = (net_loss(arch, tp, x, label) - net_loss(arch, tm, x, label)) / (2 * h);
      const double err = rel_err(gp[j], fd);
      worst = std::max(worst, err);
      pass &= err < 1e-4;
      ++checked;
    }

    const auto gx = grad_input(theta, x, label, arch);
    for (std::size_t j = 0; j < x.size(); ++j) {
      std::vector<double> xp = x, xm = x;
      xp[j] += h;
      xm[j] -= h;
      if (arch.activation == Activation::relu &&
          std::min(min_abs_preact(arch, theta, xp), min_abs_preact(arch, theta, xm)) < 1e-6) {
        ++skipped;
        continue;
      }
      const double fd = (net_loss(arch, theta, xp, label) - net_loss(arch, theta, xm, label)) / (2 * h);
      const double err = rel_err(gx[j], fd);
      worst = std::max(worst, err);
      pass &= err < 1e-4;
      ++checked;
    }
  }

  // ELBO gradient with frozen noise, 1e-3 relative
  Architecture arch;
  arch.input_dim = 2;
  arch.hidden_widths = {3};
  arch.output_dim = 2;
  arch.validate();
  const Dataset ds = synthetic_blobs(6, 2, 2, 0.15, 66);
  const std::vector<std::int32_t> idx = {0, 1, 2, 3};
  VariationalPosterior q;
  q.mean.resize(arch.param_count());
  RngStream init(66, 1);
  init.fill_normal(q.mean);
  for (double& v : q.mean) v *= 0.4;
  q.rho.assign(arch.param_count(), softplus_inverse(0.3));
  const PriorConfig prior{0.8};
  auto value = [&](const VariationalPosterior& qq) {
    RngStream frozen(66, 2);
    return elbo_estimate(qq, prior, ds, idx, 6, arch, frozen, 2).value;
  };
  RngStream frozen(66, 2);
  const ElboResult res = elbo_estimate(q, prior, ds, idx, 6, arch, frozen, 2);
  double elbo_worst = 0.0;
  for (std::size_t j = 0; j < q.size(); ++j) {
    VariationalPosterior qp = q, qm = q;
    qp.mean[j] += h;
    qm.mean[j] -= h;
    elbo_worst = std::max(elbo_worst, rel_err(res.grad_mean[j], (value(qp) - value(qm)) / (2 * h)));
    VariationalPosterior rp = q, rm = q;
    rp.rho[j] += h;
    rm.rho[j] -= h;
    elbo_worst = std::max(elbo_worst, rel_err(res.grad_rho[j], (value(rp) - value(rm)) / (2 * h)));
  }
  pass &= elbo_worst < 1e-3;

  verdict(6, pass, "gradients match central finite differences (1e-4; elbo frozen-noise 1e-3)",
          fmt("%.0f coords checked, max rel err %.2e", static_cast<double>(checked), worst) +
              fmt(", elbo max %.2e, %.0f s", elbo_worst, elapsed_s(t0)));
}

// --- criterion 7: Jensen bound on the expected weight norm -----------------

void criterion_7() {
  const auto t0 = std::chrono::steady_clock::now();
  RngStream rng(707, 0);
  bool pass = true;
  double worst_margin = -1e300;
  for (int trial = 0; trial < 50; ++trial) {
    const int rows = 1 + static_cast<int>(rng.next_below(8));
    const int cols = 1 + static_cast<int>(rng.next_below(8));
    std::vector<double> m(static_cast<std::size_t>(rows) * cols);
    for (double& v : m) v = rng.next_normal();
    const double a2 = rng.next_uniform(0.05, 4.0);

    const int n = 100'000;
    const double mc = expected_weight_norm_mc(m, rows, cols, a2, n, rng.fork(100 + trial));

    // independent pass for the standard error of that estimate
    RngStream se_rng = rng.fork(7000 + trial);
    const int probes = 20'000;
    double sum = 0.0, sum2 = 0.0;
    std::vector<double> eps(m.size());
    for (int k = 0; k < probes; ++k) {
      se_rng.fill_normal(eps);
      double acc = 0.0;
      for (std::size_t j = 0; j < m.size(); ++j) {
        const double w = m[j] + std::sqrt(a2) * eps[j];
        acc += w * w;
      }
      const double v = std::sqrt(acc);
      sum += v;
      sum2 += v * v;
    }
    const double var = sum2 / probes - (sum / probes) * (sum / probes);
    const double se = std::sqrt(var / n);

    double fro2 = 0.0;
    for (double v : m) fro2 += v * v;
    const double bound = std::sqrt(fro2 + static_cast<double>(m.size()) * a2);
    worst_margin = std::max(worst_margin, mc - bound);
    pass &= mc <= bound + 3.0 * se;
  }

  RngStream half(707, 9);
  const std::vector<double> zero1 = {0.0};
  const double half_mc = expected_weight_norm_mc(zero1, 1, 1, 1.0, 1'000'000, half);
  const double half_err = rel_err(half_mc, std::sqrt(2.0 / M_PI));
  pass &= half_err < 0.01;

  verdict(7, pass, "MC expected weight norm obeys the Jensen bound on 50 configs",
          fmt("worst (mc - bound) %.2e, half-normal rel err %.2e, %.0f s", worst_margin, half_err,
              elapsed_s(t0)));
}

// --- criterion 8: empirical estimator lower-bounds the spectral product ----

double spectral_norm(std::span<const double> a, int rows, int cols) {
  std::vector<double> v(cols, 1.0 / std::sqrt(static_cast<double>(cols)));
  double lambda = 0.0;
  for (int it = 0; it < 800; ++it) {
    std::vector<double> av(rows, 0.0);
    for (int r = 0; r < rows; ++r) {
      for (int c = 0; c < cols; ++c) av[r] += a[static_cast<std::size_t>(r) * cols + c] * v[c];
    }
    std::vector<double> atav(cols, 0.0);
    for (int r = 0; r < rows; ++r) {
      for (int c = 0; c < cols; ++c) atav[c] += a[static_cast<std::size_t>(r) * cols + c] * av[r];
    }
    double nv = 0.0;
    for (double u : atav) nv += u * u;
    nv = std::sqrt(nv);
    if (nv == 0.0) return 0.0;
    lambda = nv;
    for (int c = 0; c < cols; ++c) v[c] = atav[c] / nv;
  }
  return std::sqrt(lambda);
}

void criterion_8() {
  const auto t0 = std::chrono::steady_clock::now();
  RngStream rng(808, 0);
  bool pass = true;
  double worst_gap = -1e300, worst_oracle = 0.0;
  for (int trial = 0; trial < 20; ++trial) {
    Architecture arch;
    arch.input_dim = 2 + static_cast<int>(rng.next_below(3));
    arch.hidden_widths = {3 + static_cast<int>(rng.next_below(3))};
    arch.output_dim = 2 + static_cast<int>(rng.next_below(2));
    arch.validate();
    ParameterVector theta(arch);
    for (double& v : theta.flat()) v = rng.next_normal();

    const int npts = 50;
    std::vector<double> pts(static_cast<std::size_t>(npts) * arch.input_dim);
    for (double& v : pts) v = rng.next_uniform();

    const PosteriorEnsemble ens = PosteriorEnsemble::from_point(theta, arch);
    const auto fn = mean_logit_fn(ens);
    const auto est = empirical_lipschitz(fn, pts, arch.input_dim, Norm::l2);

    double spec_prod = 1.0;
    for (int l = 0; l < arch.depth(); ++l) {
      spec_prod *= spectral_norm(theta.weights(l), arch.layer_output(l), arch.layer_input(l));
    }
    worst_gap = std::max(worst_gap, est.value - spec_prod);
    pass &= est.value <= spec_prod + 1e-9;

    // brute-force double-loop oracle over all ordered pairs
    std::vector<std::vector<double>> gy;
    for (int i = 0; i < npts; ++i) {
      gy.push_back(fn(std::span<const double>(pts.data() + static_cast<std::size_t>(i) * arch.input_dim,
                                              static_cast<std::size_t>(arch.input_dim))));
    }
    double naive = -1.0;
    for (int i = 0; i < npts; ++i) {
      for (int j = 0; j < npts; ++j) {
        if (i == j) continue;
        double dx = 0.0, dy = 0.0;
        for (int k = 0; k < arch.input_dim; ++k) {
          const double d = pts[static_cast<std::size_t>(i) * arch.input_dim + k] -
                           pts[static_cast<std::size_t>(j) * arch.input_dim + k];
          dx += d * d;
        }
        for (std::size_t k = 0; k < gy[i].size(); ++k) {
          dy += (gy[i][k] - gy[j][k]) * (gy[i][k] - gy[j][k]);
        }
        dx = std::sqrt(dx);
        if (dx >= 1e-9) naive = std::max(naive, std::sqrt(dy) / dx);
      }
    }
    const double oracle_err = rel_err(est.value, naive);
    worst_oracle = std::max(worst_oracle, oracle_err);
    pass &= oracle_err < 1e-12;
  }
  verdict(8, pass, "empirical estimate <= spectral product on 20 nets; pair oracle agrees",
          fmt("worst (est - bound) %.2e, oracle rel err %.2e, %.0f s", worst_gap, worst_oracle,
              elapsed_s(t0)));
}

// --- criterion 9: attack feasibility, dominance, and noise comparison ------

void criterion_9() {
  const auto t0 = std::chrono::steady_clock::now();
  const Dataset all = synthetic_blobs(260, 2, 2, 0.15, 90);
  Dataset train, test;
  train.dim = test.dim = 2;
  train.num_classes = test.num_classes = 2;
  train.inputs.assign(all.inputs.begin(), all.inputs.begin() + 200 * 2);
  train.labels.assign(all.labels.begin(), all.labels.begin() + 200);
  test.inputs.assign(all.inputs.begin() + 200 * 2, all.inputs.end());
  test.labels.assign(all.labels.begin() + 200, all.labels.end());

  Architecture arch;
  arch.input_dim = 2;
  arch.hidden_widths = {8};
  arch.output_dim = 2;
  arch.validate();
  TrainConfig tc;
  tc.epochs = 100;
  tc.batch_size = 32;
  tc.learning_rate = 0.2;
  tc.seed = 90;
  const VariationalPosterior q = train_mfvi(arch, train, {1.0}, tc);
  const PosteriorEnsemble judge = PosteriorEnsemble::from_posterior(q, 64, RngStream(90, 0).fork(4), arch);

  AttackConfig cfg;
  cfg.epsilon = 0.25;
  cfg.step_size = 0.0625;
  cfg.mc_samples = 8;

  bool feasible = true, dominated = true;
  int strongest_ok = 0, sign_ok = 0, noise_ok = 0;
  Workspace ws(arch);
  for (int i = 0; i < test.size(); ++i) {
    RngStream rng = RngStream(91, 0).fork(static_cast<std::uint64_t>(i));
    const AttackResult best = strongest_attack(q, test.input(i), test.labels[i], cfg, rng, arch, &judge);
    strongest_ok += best.predicted_class == test.labels[i];
    for (int k = 0; k < 2; ++k) {
      feasible &= std::abs(best.x_adv[k] - test.input(i)[k]) <= cfg.epsilon + 1e-9;
      feasible &= best.x_adv[k] >= 0.0 && best.x_adv[k] <= 1.0;
    }
    for (AttackVariant v :
         {AttackVariant::expected_sign, AttackVariant::expected_nosign, AttackVariant::mean_pgd}) {
      RngStream vr = RngStream(91, 0).fork(static_cast<std::uint64_t>(i)).fork(static_cast<std::uint64_t>(v));
      const AttackResult r = pgd_attack(q, test.input(i), test.labels[i], cfg, v, vr, arch, &judge);
      for (int k = 0; k < 2; ++k) {
        feasible &= std::abs(r.x_adv[k] - test.input(i)[k]) <= cfg.epsilon + 1e-9;
        feasible &= r.x_adv[k] >= 0.0 && r.x_adv[k] <= 1.0;
      }
      dominated &= (best.success && !r.success) ||
                   (best.success == r.success && best.adv_loss >= r.adv_loss - 1e-12);
      if (v == AttackVariant::expected_sign) sign_ok += r.predicted_class == test.labels[i];
    }
    RngStream nrng = RngStream(92, 0).fork(static_cast<std::uint64_t>(i));
    const auto noisy = random_init(test.input(i), cfg.epsilon, nrng);
    noise_ok += judge.predict(noisy, ws) == test.labels[i];
  }
  const bool noise_bound = sign_ok <= noise_ok;
  verdict(9, feasible && dominated && noise_bound,
          "attacks stay in the ball-box, strongest dominates, attack acc <= noise acc",
          fmt("attack acc %.1f%%, noise acc %.1f%%, %.0f s", 100.0 * sign_ok / test.size(),
              100.0 * noise_ok / test.size(), elapsed_s(t0)));
}

// --- criterion 10: posterior scale monotone in the prior variance ----------

void criterion_10() {
  const auto t0 = std::chrono::steady_clock::now();
  const Dataset all = synthetic_blobs(200, 2, 2, 0.05, 10);
  Architecture arch;
  arch.input_dim = 2;
  arch.hidden_widths = {8};
  arch.output_dim = 2;
  arch.validate();

  std::vector<double> mnorm, sbar;
  for (double a2 : {0.05, 0.5, 5.0}) {
    TrainConfig tc;
    tc.epochs = 150;
    tc.batch_size = 32;
    tc.learning_rate = 0.2;
    tc.seed = 10;
    const VariationalPosterior q = train_mfvi(arch, all, {a2}, tc);
    mnorm.push_back(q.mean_norm2());
    sbar.push_back(q.mean_variance());
  }
  const double secs = elapsed_s(t0);
  bool pass = secs <= 120.0;
  for (int i = 0; i + 1 < 3; ++i) {
    pass &= mnorm[i] <= 1.05 * mnorm[i + 1];
    pass &= sbar[i] <= 1.05 * sbar[i + 1];
  }
  verdict(10, pass, "|m| and mean s nondecreasing in alpha2 within 5% slack",
          fmt("|m|: %.3f / %.3f / %.3f", mnorm[0], mnorm[1], mnorm[2]) +
              fmt(", s: %.2e / %.2e / %.2e", sbar[0], sbar[1], sbar[2]) +
              fmt(", %.0f s", secs));
}

// --- criterion 11: byte-identical reports from identical configs -----------

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void criterion_11() {
  const auto t0 = std::chrono::steady_clock::now();
  ExperimentConfig cfg;
  cfg.dataset = "blobs";
  cfg.blobs = {120, 60, 2, 2, 0.08};
  cfg.alpha2_grid = {0.2, 2.0};
  cfg.seeds = {10, 20};
  cfg.hidden_widths = {6};
  cfg.train.epochs = 25;
  cfg.train.batch_size = 30;
  cfg.train.learning_rate = 0.2;
  cfg.attack.iterations = 10;
  cfg.attack.mc_samples = 4;
  cfg.predictive_samples = 16;
  cfg.lipschitz_samples = 16;

  const fs::path base = fs::temp_directory_path() / "bnnlip_acceptance_c11";
  fs::remove_all(base);
  cfg.out_dir = (base / "a").string();
  run_sweep(cfg);
  cfg.out_dir = (base / "b").string();
  run_sweep(cfg);
  const std::string csv_a = slurp(base / "a" / "report.csv");
  const std::string csv_b = slurp(base / "b" / "report.csv");
  const bool pass = !csv_a.empty() && csv_a == csv_b;
  verdict(11, pass, "two identical smoke sweeps produce byte-identical report.csv",
          fmt("%.0f bytes, %.1f s", static_cast<double>(csv_a.size()), elapsed_s(t0)));
}

} // namespace

int main() {
  std::printf("acceptance: self-contained property criteria\n");
  criterion_5();
  criterion_6();
  criterion_7();
  criterion_8();
  criterion_9();
  criterion_10();
  criterion_11();
  if (g_failures) {
    std::printf("%d criterion(s) FAILED\n", g_failures);
    return 1;
  }
  std::printf("all property criteria passed\n");
  return 0;
}
