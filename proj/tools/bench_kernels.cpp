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

// Times the data-parallel kernels on their serial reference path and their
// OpenMP path, and checks that both produce identical bits. Sized roughly
// like one cell of the image-scale protocol.

#include <chrono>
#include <cstdio>
#include <functional>
#include <numeric>
#include <string>
#include <vector>

#include "bnnlip/attacks.hpp"
#include "bnnlip/harness.hpp"
#include "bnnlip/lipschitz.hpp"
#include "bnnlip/mfvi.hpp"
#include "bnnlip/network.hpp"
#include "bnnlip/rng.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

using namespace bnnlip;

namespace {

double time_ms(const std::function<void()>& fn, int reps) {
  fn(); // warm up
  const auto t0 = std::chrono::steady_clock::now();
  for (int r = 0; r < reps; ++r) fn();
  const auto t1 = std::chrono::steady_clock::now();
  return std::chrono::duration<double, std::milli>(t1 - t0).count() / reps;
}

void report(const char* name, double serial_ms, double parallel_ms, bool match) {
  std::printf("%-28s %10.2f ms %10.2f ms %7.2fx   %s\n", name, serial_ms, parallel_ms,
              serial_ms / parallel_ms, match ? "bit-identical" : "MISMATCH");
}

} // namespace

int main() {
#ifdef _OPENMP
  std::printf("OpenMP threads: %d\n", omp_get_max_threads());
#else
  std::printf("built without OpenMP; both columns run serially\n");
#endif
  std::printf("%-28s %13s %13s %9s\n", "kernel", "serial", "parallel", "speedup");

  Architecture arch;
  arch.input_dim = 784;
  arch.hidden_widths = {32, 64, 32};
  arch.output_dim = 10;
  arch.validate();
  const std::size_t p = arch.param_count();

  RngStream rng(2026, 0);
  ParameterVector theta(arch);
  for (double& v : theta.flat()) v = 0.05 * rng.next_normal();

  const int n_points = 512, batch = 128;
  Dataset data;
  data.name = "bench";
  data.dim = arch.input_dim;
  data.num_classes = arch.output_dim;
  data.inputs.resize(static_cast<std::size_t>(n_points) * data.dim);
  for (double& v : data.inputs) v = rng.next_uniform();
  data.labels.resize(n_points);
  for (int& y : data.labels) y = static_cast<int>(rng.next_below(10));

  // normal-variate throughput (shared by every stochastic kernel)
  {
    std::vector<double> buf(1 << 16);
    RngStream nr(7, 7);
    const double ms = time_ms([&] { nr.fill_normal(buf); }, 200);
    std::printf("%-28s %10.2f M normals/s\n", "fill_normal", buf.size() / ms / 1e3);
  }

  // batch parameter gradient
  {
    std::vector<std::int32_t> idx(batch);
    std::iota(idx.begin(), idx.end(), 0);
    BatchGradWorkspace ws_s, ws_p;
    std::vector<double> gs(p), gp(p);
    const double s_ms = time_ms(
        [&] {
          batch_param_gradient(arch, theta, data.inputs, data.dim, data.labels, idx, gs, ws_s,
                               Exec::serial);
        },
        10);
    const double p_ms = time_ms(
        [&] {
          batch_param_gradient(arch, theta, data.inputs, data.dim, data.labels, idx, gp, ws_p,
                               Exec::parallel);
        },
        10);
    report("batch_param_gradient", s_ms, p_ms, gs == gp);
  }

  VariationalPosterior q;
  q.mean.assign(theta.flat().begin(), theta.flat().end());
  q.rho.assign(p, softplus_inverse(0.05));
  const PosteriorEnsemble ens = PosteriorEnsemble::from_posterior(q, 32, RngStream(3, 0), arch);

  // frozen-ensemble accuracy over a point set
  {
    double a_s = 0.0, a_p = 0.0;
    const double s_ms = time_ms([&] { a_s = ensemble_accuracy(ens, data, Exec::serial); }, 3);
    const double p_ms = time_ms([&] { a_p = ensemble_accuracy(ens, data, Exec::parallel); }, 3);
    report("ensemble_accuracy", s_ms, p_ms, a_s == a_p);
  }

  // empirical Lipschitz pair scan (g cached per point inside)
  {
    const auto fn = mean_logit_fn(ens);
    LipschitzEstimate e_s, e_p;
    const double s_ms =
        time_ms([&] { e_s = empirical_lipschitz(fn, data.inputs, data.dim, Norm::l2, Exec::serial); }, 2);
    const double p_ms =
        time_ms([&] { e_p = empirical_lipschitz(fn, data.inputs, data.dim, Norm::l2, Exec::parallel); }, 2);
    report("empirical_lipschitz", s_ms, p_ms,
           e_s.value == e_p.value && e_s.argmax_i == e_p.argmax_i && e_s.argmax_j == e_p.argmax_j);
  }

  // strongest-attack sweep on a slice of points
  {
    Dataset slice = data;
    slice.inputs.resize(static_cast<std::size_t>(16) * data.dim);
    slice.labels.resize(16);
    AttackConfig cfg;
    cfg.mc_samples = 5;
    cfg.iterations = 10;
    std::vector<AttackResult> r_s, r_p;
    const RngStream base(11, 0);
    const double s_ms =
        time_ms([&] { r_s = attack_sweep(q, slice, cfg, base, arch, &ens, Exec::serial); }, 1);
    const double p_ms =
        time_ms([&] { r_p = attack_sweep(q, slice, cfg, base, arch, &ens, Exec::parallel); }, 1);
    bool match = r_s.size() == r_p.size();
    for (std::size_t i = 0; match && i < r_s.size(); ++i) {
      match = r_s[i].x_adv == r_p[i].x_adv && r_s[i].adv_loss == r_p[i].adv_loss;
    }
    report("attack_sweep", s_ms, p_ms, match);
  }

  // Monte-Carlo expected weight norm
  {
    std::vector<double> m(64 * 32);
    RngStream mr(5, 5);
    mr.fill_normal(m);
    double v_s = 0.0, v_p = 0.0;
    const RngStream base(13, 0);
    const double s_ms =
        time_ms([&] { v_s = expected_weight_norm_mc(m, 64, 32, 0.5, 20000, base, Exec::serial); }, 2);
    const double p_ms =
        time_ms([&] { v_p = expected_weight_norm_mc(m, 64, 32, 0.5, 20000, base, Exec::parallel); }, 2);
    report("expected_weight_norm_mc", s_ms, p_ms, v_s == v_p);
  }

  return 0;
}
