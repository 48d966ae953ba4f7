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

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <vector>

#include "bnnlip/attacks.hpp"
#include "bnnlip/data.hpp"
#include "bnnlip/mfvi.hpp"
#include "bnnlip/rng.hpp"

using namespace bnnlip;

namespace {

Architecture make_arch(int in, std::vector<int> hidden, int out) {
  Architecture a;
  a.input_dim = in;
  a.hidden_widths = std::move(hidden);
  a.output_dim = out;
  a.validate();
  return a;
}

VariationalPosterior point_mass(std::vector<double> mean, double s = 1e-22) {
  VariationalPosterior q;
  q.rho.assign(mean.size(), softplus_inverse(std::sqrt(s)));
  q.mean = std::move(mean);
  return q;
}

double rel_err(double a, double b) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-12});
}

double log_normal_density(double x, double mean, double var) {
  return -0.5 * (std::log(2.0 * M_PI * var) + (x - mean) * (x - mean) / var);
}

} // namespace

TEST_CASE("random_init: zero budget returns the point itself") {
  RngStream rng(1, 0);
  const std::vector<double> x = {0.25, 0.75, 0.5};
  CHECK(random_init(x, 0.0, rng) == x);
}

TEST_CASE("random_init: clipping at the lower box edge") {
  RngStream rng(2, 0);
  const std::vector<double> x(20, 0.0);
  const auto x0 = random_init(x, 0.1, rng);
  for (double v : x0) {
    CHECK(v >= 0.0);
    CHECK(v <= 0.1);
  }
}

TEST_CASE("random_init: interior coordinate is uniform on [x-eps, x+eps]") {
  RngStream rng(3, 0);
  const std::vector<double> x = {0.5};
  const double eps = 0.1;
  const int n = 100'000;
  std::vector<double> draws(n);
  for (int i = 0; i < n; ++i) draws[i] = random_init(x, eps, rng)[0];
  std::sort(draws.begin(), draws.end());
  // Kolmogorov-Smirnov against the uniform cdf; 1.628/sqrt(n) ~ p = 0.01
  double d_stat = 0.0;
  for (int i = 0; i < n; ++i) {
    const double cdf = (draws[i] - (0.5 - eps)) / (2 * eps);
    d_stat = std::max(d_stat, std::abs(cdf - static_cast<double>(i + 1) / n));
    d_stat = std::max(d_stat, std::abs(cdf - static_cast<double>(i) / n));
  }
  CHECK(d_stat < 1.628 / std::sqrt(static_cast<double>(n)));
}

TEST_CASE("expected gradient: point-mass posterior equals the deterministic gradient") {
  const Architecture arch = make_arch(3, {4}, 2);
  RngStream init(5, 0);
  std::vector<double> mean(arch.param_count());
  init.fill_normal(mean);
  const VariationalPosterior q = point_mass(mean);

  ParameterVector theta(arch);
  std::copy(mean.begin(), mean.end(), theta.flat().begin());
  const std::vector<double> x = {0.2, 0.5, 0.8};
  const auto want = grad_input(theta, x, 1, arch);

  RngStream rng(6, 0);
  const auto got = expected_input_gradient(q, x, 1, 8, rng, arch);
  for (int k = 0; k < 3; ++k) CHECK(got[k] == doctest::Approx(want[k]).epsilon(1e-9));
}

TEST_CASE("expected gradient: near zero for a zero-mean posterior") {
  const Architecture arch = make_arch(2, {4}, 2);
  const std::size_t p = arch.param_count();
  VariationalPosterior q;
  q.mean.assign(p, 0.0);
  q.rho.assign(p, softplus_inverse(0.3));
  const std::vector<double> x = {0.4, 0.7};

  // standard error from single-draw gradients
  RngStream se_rng(7, 1);
  const int probes = 4000;
  std::vector<double> sum(2, 0.0), sum2(2, 0.0);
  for (int t = 0; t < probes; ++t) {
    const auto g = expected_input_gradient(q, x, 0, 1, se_rng, arch);
    for (int k = 0; k < 2; ++k) {
      sum[k] += g[k];
      sum2[k] += g[k] * g[k];
    }
  }
  const int T = 2000;
  RngStream rng(7, 2);
  const auto mean_grad = expected_input_gradient(q, x, 0, T, rng, arch);
  for (int k = 0; k < 2; ++k) {
    const double var = sum2[k] / probes - (sum[k] / probes) * (sum[k] / probes);
    // the mean gradient is far below the single-draw gradient scale
    CHECK(std::abs(mean_grad[k]) <= 0.15 * std::sqrt(var));
  }
}

TEST_CASE("expected gradient matches quadrature on a one-parameter net") {
  const Architecture arch = make_arch(1, {}, 2);
  VariationalPosterior q = point_mass({0.7, -0.4, 0.25, -0.1});
  q.rho[0] = softplus_inverse(0.5); // only W[0][0] is random, sd 0.5
  const std::vector<double> x = {0.9};
  const int label = 0;

  // d loss / d x = p_1(w0) * (w1 - w0) for two classes, integrated over w0
  const double m0 = 0.7, sd = 0.5;
  const int grid = 40'001;
  const double lo = m0 - 8 * sd, hi = m0 + 8 * sd;
  const double step = (hi - lo) / (grid - 1);
  double acc = 0.0, weight = 0.0;
  for (int i = 0; i < grid; ++i) {
    const double w0 = lo + i * step;
    const double dens = std::exp(log_normal_density(w0, m0, sd * sd));
    const double trap = (i == 0 || i == grid - 1) ? 0.5 : 1.0;
    const double z0 = w0 * x[0] + 0.25;
    const double z1 = -0.4 * x[0] - 0.1;
    const double p1 = 1.0 / (1.0 + std::exp(z0 - z1));
    acc += trap * dens * (p1 * (-0.4 - w0));
    weight += trap * dens;
  }
  const double quad = acc / weight;

  RngStream rng(2026, 9);
  const auto mc = expected_input_gradient(q, x, label, 100'000, rng, arch);
  CHECK(rel_err(mc[0], quad) < 0.01);
}

TEST_CASE("pgd on a linear model reaches the closed-form corner") {
  // two classes over a 4-pixel input; untargeted ascent drives x toward
  // x + eps * sign(w_other - w_label)
  const Architecture arch = make_arch(4, {}, 2);
  RngStream init(11, 0);
  std::vector<double> mean(arch.param_count());
  init.fill_normal(mean);
  const VariationalPosterior q = point_mass(mean);

  ParameterVector theta(arch);
  std::copy(mean.begin(), mean.end(), theta.flat().begin());
  const std::vector<double> x = {0.5, 0.4, 0.6, 0.5};
  const int label = 0;

  AttackConfig cfg;
  cfg.epsilon = 0.1;
  cfg.iterations = 20;
  cfg.step_size = 0.025;
  cfg.mc_samples = 4;

  std::vector<double> corner(4);
  for (int k = 0; k < 4; ++k) {
    const double dir = theta.weights(0)[4 + k] - theta.weights(0)[k]; // w_1 - w_0
    corner[k] = x[k] + cfg.epsilon * (dir > 0 ? 1.0 : -1.0);
  }

  for (AttackVariant v : {AttackVariant::expected_sign, AttackVariant::mean_pgd}) {
    RngStream rng(12, 0);
    const AttackResult res = pgd_attack(q, x, label, cfg, v, rng, arch);
    for (int k = 0; k < 4; ++k) CHECK(res.x_adv[k] == doctest::Approx(corner[k]).epsilon(1e-9));
  }
}

TEST_CASE("pgd with zero budget returns the clean point and clean prediction") {
  const Architecture arch = make_arch(2, {3}, 2);
  RngStream init(13, 0);
  std::vector<double> mean(arch.param_count());
  init.fill_normal(mean);
  const VariationalPosterior q = point_mass(mean);
  const std::vector<double> x = {0.3, 0.8};

  AttackConfig cfg;
  cfg.epsilon = 0.0;
  cfg.mc_samples = 4;
  RngStream rng(14, 0);
  const AttackResult res = pgd_attack(q, x, 0, cfg, AttackVariant::expected_sign, rng, arch);
  CHECK(res.x_adv == x);

  ParameterVector theta(arch);
  std::copy(mean.begin(), mean.end(), theta.flat().begin());
  const auto clean = softmax(forward_logits(theta, x, arch));
  const int clean_pred =
      static_cast<int>(std::max_element(clean.begin(), clean.end()) - clean.begin());
  CHECK(res.predicted_class == clean_pred);
}

TEST_CASE("constant predictor: attacks fail with loss ln(num_classes)") {
  const Architecture arch = make_arch(3, {4}, 10);
  const std::size_t p = arch.param_count();
  VariationalPosterior q;
  q.mean.assign(p, 0.0);
  q.rho.assign(p, softplus_inverse(1e-6));
  const std::vector<double> x = {0.2, 0.6, 0.4};

  AttackConfig cfg;
  cfg.mc_samples = 4;
  RngStream rng(15, 0);
  const AttackResult res = strongest_attack(q, x, 3, cfg, rng, arch);
  CHECK_FALSE(res.success); // the prediction never moves
  CHECK(res.adv_loss == doctest::Approx(std::log(10.0)).epsilon(1e-4));

  // in the exact point-mass limit (sigma underflows to zero) the gradient is
  // exactly zero, sign(0) = 0, and the iterate stays at the random start
  VariationalPosterior zero = q;
  zero.rho.assign(p, -800.0);
  RngStream r1(16, 0), r2(16, 0);
  const AttackResult a = pgd_attack(zero, x, 3, cfg, AttackVariant::expected_sign, r1, arch);
  const auto x0 = random_init(x, cfg.epsilon, r2);
  CHECK(a.x_adv == x0);
}

TEST_CASE("attack results are deterministic and feasible") {
  const Dataset train = synthetic_blobs(120, 2, 2, 0.12, 21);
  const Architecture arch = make_arch(2, {6}, 2);
  TrainConfig tcfg;
  tcfg.epochs = 30;
  tcfg.batch_size = 30;
  tcfg.seed = 21;
  const VariationalPosterior q = train_mfvi(arch, train, {0.5}, tcfg);

  AttackConfig cfg;
  cfg.epsilon = 0.15;
  cfg.step_size = 0.0375;
  cfg.mc_samples = 6;

  const Dataset probe = synthetic_blobs(24, 2, 2, 0.12, 22);
  for (AttackVariant v :
       {AttackVariant::expected_sign, AttackVariant::expected_nosign, AttackVariant::mean_pgd}) {
    for (int i = 0; i < probe.size(); ++i) {
      RngStream rng(23, static_cast<std::uint64_t>(i));
      const AttackResult res = pgd_attack(q, probe.input(i), probe.labels[i], cfg, v, rng, arch);
      for (int k = 0; k < 2; ++k) {
        CHECK(std::abs(res.x_adv[k] - probe.input(i)[k]) <= cfg.epsilon + 1e-9);
        CHECK(res.x_adv[k] >= 0.0);
        CHECK(res.x_adv[k] <= 1.0);
      }
      RngStream rng2(23, static_cast<std::uint64_t>(i));
      const AttackResult again = pgd_attack(q, probe.input(i), probe.labels[i], cfg, v, rng2, arch);
      CHECK(res.x_adv == again.x_adv);
      CHECK(res.adv_loss == again.adv_loss);
      CHECK(res.success == again.success);
    }
  }
}

TEST_CASE("strongest attack dominates every variant per point") {
  const Dataset train = synthetic_blobs(150, 2, 2, 0.15, 31);
  const Architecture arch = make_arch(2, {6}, 2);
  TrainConfig tcfg;
  tcfg.epochs = 30;
  tcfg.batch_size = 30;
  tcfg.seed = 31;
  const VariationalPosterior q = train_mfvi(arch, train, {1.0}, tcfg);
  const PosteriorEnsemble judge = PosteriorEnsemble::from_posterior(q, 32, RngStream(31, 99), arch);

  AttackConfig cfg;
  cfg.epsilon = 0.2;
  cfg.step_size = 0.05;
  cfg.mc_samples = 6;

  const Dataset probe = synthetic_blobs(30, 2, 2, 0.15, 32);
  int strongest_correct = 0;
  std::vector<int> variant_correct(3, 0);
  for (int i = 0; i < probe.size(); ++i) {
    RngStream rng(33, static_cast<std::uint64_t>(i));
    const AttackResult best =
        strongest_attack(q, probe.input(i), probe.labels[i], cfg, rng, arch, &judge);
    strongest_correct += !best.success;

    int v_idx = 0;
    for (AttackVariant v :
         {AttackVariant::expected_sign, AttackVariant::expected_nosign, AttackVariant::mean_pgd}) {
      RngStream vr = RngStream(33, static_cast<std::uint64_t>(i)).fork(static_cast<std::uint64_t>(v));
      const AttackResult r =
          pgd_attack(q, probe.input(i), probe.labels[i], cfg, v, vr, arch, &judge);
      variant_correct[v_idx] += !r.success;
      // lexicographic dominance on (success, loss)
      const bool dominated =
          (best.success && !r.success) ||
          (best.success == r.success && best.adv_loss >= r.adv_loss - 1e-12);
      CHECK(dominated);
      ++v_idx;
    }
  }
  // set-level: strongest accuracy cannot beat any single variant's accuracy
  for (int v = 0; v < 3; ++v) CHECK(strongest_correct <= variant_correct[v]);
}

TEST_CASE("attack sweep: serial equals parallel, and beats random noise") {
  const Dataset train = synthetic_blobs(150, 2, 2, 0.15, 41);
  const Architecture arch = make_arch(2, {6}, 2);
  TrainConfig tcfg;
  tcfg.epochs = 40;
  tcfg.batch_size = 30;
  tcfg.seed = 41;
  const VariationalPosterior q = train_mfvi(arch, train, {1.0}, tcfg);
  const PosteriorEnsemble judge = PosteriorEnsemble::from_posterior(q, 32, RngStream(41, 99), arch);

  AttackConfig cfg;
  cfg.epsilon = 0.25;
  cfg.step_size = 0.0625;
  cfg.mc_samples = 6;

  const Dataset probe = synthetic_blobs(40, 2, 2, 0.15, 42);
  const RngStream base(43, 0);
  const auto serial = attack_sweep(q, probe, cfg, base, arch, &judge, Exec::serial);
  const auto parallel = attack_sweep(q, probe, cfg, base, arch, &judge, Exec::parallel);
  REQUIRE(serial.size() == parallel.size());
  for (std::size_t i = 0; i < serial.size(); ++i) {
    CHECK(serial[i].x_adv == parallel[i].x_adv);
    CHECK(serial[i].adv_loss == parallel[i].adv_loss);
    CHECK(serial[i].variant == parallel[i].variant);
  }

  // expected_sign attack accuracy <= accuracy under uniform noise of the
  // same budget
  Workspace ws(arch);
  int attack_correct = 0, noise_correct = 0;
  for (int i = 0; i < probe.size(); ++i) {
    RngStream arng = RngStream(44, 0).fork(static_cast<std::uint64_t>(i));
    const AttackResult res =
        pgd_attack(q, probe.input(i), probe.labels[i], cfg, AttackVariant::expected_sign, arng,
                   arch, &judge);
    attack_correct += res.predicted_class == probe.labels[i];

    RngStream nrng = RngStream(45, 0).fork(static_cast<std::uint64_t>(i));
    const auto noisy = random_init(probe.input(i), cfg.epsilon, nrng);
    noise_correct += judge.predict(noisy, ws) == probe.labels[i];
  }
  CHECK(attack_correct <= noise_correct);
}
