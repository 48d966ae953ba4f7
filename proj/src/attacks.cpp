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

#include "bnnlip/attacks.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace bnnlip {

namespace {

// per-variant substream ids inside one point's attack stream
constexpr std::uint64_t kJudgeSubStream = 100;

double sign_of(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

// State reused across points of a sweep: sigma = softplus(rho) is a pure
// function of q, and mean_theta backs the mean_pgd variant.
struct AttackContext {
  const VariationalPosterior* q = nullptr;
  const Architecture* arch = nullptr;
  std::vector<double> sigma;
  ParameterVector mean_theta;

  AttackContext(const VariationalPosterior& q_in, const Architecture& arch_in)
      : q(&q_in), arch(&arch_in), mean_theta(arch_in) {
    if (q_in.size() != arch_in.param_count()) {
      throw std::invalid_argument("attack: posterior size does not match architecture");
    }
    sigma.resize(q_in.size());
    for (std::size_t i = 0; i < sigma.size(); ++i) sigma[i] = softplus(q_in.rho[i]);
    std::copy(q_in.mean.begin(), q_in.mean.end(), mean_theta.flat().begin());
  }
};

struct AttackScratch {
  explicit AttackScratch(const Architecture& arch)
      : theta(arch), ws(arch), eps(arch.param_count()), grad(arch.input_dim),
        acc(arch.input_dim), probs(arch.output_dim) {}
  ParameterVector theta;
  Workspace ws;
  std::vector<double> eps;
  std::vector<double> grad;
  std::vector<double> acc;
  std::vector<double> probs;
};

// mean over T fresh posterior draws of the input gradient, into scr.acc
void expected_gradient_into(const AttackContext& ctx, std::span<const double> x, int label, int T,
                            RngStream& rng, AttackScratch& scr) {
  std::fill(scr.acc.begin(), scr.acc.end(), 0.0);
  const std::size_t p = ctx.q->size();
  for (int t = 0; t < T; ++t) {
    rng.fill_normal(scr.eps);
    double* th = scr.theta.data();
    for (std::size_t i = 0; i < p; ++i) th[i] = ctx.q->mean[i] + ctx.sigma[i] * scr.eps[i];
    loss_grad_input_into(*ctx.arch, scr.theta, x, label, scr.ws, scr.grad);
    for (std::size_t k = 0; k < scr.acc.size(); ++k) scr.acc[k] += scr.grad[k];
  }
  const double inv = 1.0 / static_cast<double>(T);
  for (double& v : scr.acc) v *= inv;
}

AttackResult pgd_attack_ctx(const AttackContext& ctx, std::span<const double> x, int label,
                            const AttackConfig& cfg, AttackVariant variant, RngStream& rng,
                            const PosteriorEnsemble* judge, AttackScratch& scr) {
  const int d = ctx.arch->input_dim;
  AttackResult res;
  res.variant = variant;
  res.x_adv = random_init(x, cfg.epsilon, rng, cfg.box_lo, cfg.box_hi);

  std::vector<double> lo(d), hi(d);
  for (int k = 0; k < d; ++k) {
    lo[k] = std::max(cfg.box_lo, x[k] - cfg.epsilon);
    hi[k] = std::min(cfg.box_hi, x[k] + cfg.epsilon);
  }

  for (int it = 0; it < cfg.iterations; ++it) {
    const double* g = nullptr;
    if (variant == AttackVariant::mean_pgd) {
      loss_grad_input_into(*ctx.arch, ctx.mean_theta, res.x_adv, label, scr.ws, scr.grad);
      g = scr.grad.data();
    } else {
      expected_gradient_into(ctx, res.x_adv, label, cfg.mc_samples, rng, scr);
      g = scr.acc.data();
    }

    bool finite = true;
    for (int k = 0; k < d; ++k) finite &= std::isfinite(g[k]);
    if (!finite) {
      res.aborted = true;
      res.note = "non-finite gradient at iteration " + std::to_string(it);
      break;
    }

    if (variant == AttackVariant::expected_nosign) {
      double mx = 0.0;
      for (int k = 0; k < d; ++k) mx = std::max(mx, std::abs(g[k]));
      const double scale = mx > 0.0 ? cfg.step_size / mx : 0.0;
      for (int k = 0; k < d; ++k) {
        res.x_adv[k] = std::clamp(res.x_adv[k] + scale * g[k], lo[k], hi[k]);
      }
    } else {
      for (int k = 0; k < d; ++k) {
        res.x_adv[k] = std::clamp(res.x_adv[k] + cfg.step_size * sign_of(g[k]), lo[k], hi[k]);
      }
    }
  }

  const auto argmax = [&](std::span<const double> probs) {
    int best = 0;
    for (int c = 1; c < ctx.arch->output_dim; ++c) {
      if (probs[c] > probs[best]) best = c;
    }
    return best;
  };
  if (judge) {
    judge->mean_probs(res.x_adv, scr.ws, scr.probs);
    res.predicted_class = argmax(scr.probs);
    std::vector<double> clean_probs(ctx.arch->output_dim);
    judge->mean_probs(x, scr.ws, clean_probs);
    res.clean_class = argmax(clean_probs);
  } else {
    // same judging draws for both points, so the flip test is coherent
    RngStream adv_rng = rng.fork(kJudgeSubStream);
    const auto probs = predictive(*ctx.q, res.x_adv, cfg.mc_samples, adv_rng, *ctx.arch);
    std::copy(probs.begin(), probs.end(), scr.probs.begin());
    res.predicted_class = argmax(scr.probs);
    RngStream clean_rng = rng.fork(kJudgeSubStream);
    res.clean_class = argmax(predictive(*ctx.q, x, cfg.mc_samples, clean_rng, *ctx.arch));
  }
  res.success = !res.aborted && res.predicted_class != res.clean_class;
  res.adv_loss = cross_entropy(scr.probs, label);
  return res;
}

AttackResult strongest_ctx(const AttackContext& ctx, std::span<const double> x, int label,
                           const AttackConfig& cfg, RngStream& rng,
                           const PosteriorEnsemble* judge, AttackScratch& scr) {
  AttackResult best;
  bool first = true;
  for (AttackVariant v : {AttackVariant::expected_sign, AttackVariant::expected_nosign,
                          AttackVariant::mean_pgd}) {
    RngStream vr = rng.fork(static_cast<std::uint64_t>(v));
    AttackResult r = pgd_attack_ctx(ctx, x, label, cfg, v, vr, judge, scr);
    // lexicographic (success, adv_loss); earlier variant wins exact ties
    const bool better = first || (r.success && !best.success) ||
                        (r.success == best.success && r.adv_loss > best.adv_loss);
    if (better) best = std::move(r);
    first = false;
  }
  return best;
}

} // namespace

void AttackConfig::validate() const {
  if (epsilon < 0.0) throw std::invalid_argument("attack: epsilon must be nonnegative");
  if (iterations < 1) throw std::invalid_argument("attack: iterations must be >= 1");
  if (!(step_size > 0.0)) throw std::invalid_argument("attack: step size must be positive");
  if (mc_samples < 1) throw std::invalid_argument("attack: mc_samples must be >= 1");
  if (!(box_lo <= box_hi)) throw std::invalid_argument("attack: empty input box");
}

const char* attack_variant_name(AttackVariant v) {
  switch (v) {
    case AttackVariant::expected_sign: return "expected_sign";
    case AttackVariant::expected_nosign: return "expected_nosign";
    case AttackVariant::mean_pgd: return "mean_pgd";
  }
  return "?";
}

std::vector<double> random_init(std::span<const double> x, double epsilon, RngStream& rng,
                                double box_lo, double box_hi) {
  std::vector<double> out(x.size());
  for (std::size_t k = 0; k < x.size(); ++k) {
    out[k] = std::clamp(x[k] + rng.next_uniform(-epsilon, epsilon), box_lo, box_hi);
  }
  return out;
}

std::vector<double> expected_input_gradient(const VariationalPosterior& q,
                                            std::span<const double> x, int label, int T,
                                            RngStream& rng, const Architecture& arch) {
  if (T < 1) throw std::invalid_argument("expected_input_gradient: T must be >= 1");
  const AttackContext ctx(q, arch);
  AttackScratch scr(arch);
  expected_gradient_into(ctx, x, label, T, rng, scr);
  return scr.acc;
}

AttackResult pgd_attack(const VariationalPosterior& q, std::span<const double> x, int label,
                        const AttackConfig& cfg, AttackVariant variant, RngStream& rng,
                        const Architecture& arch, const PosteriorEnsemble* judge) {
  cfg.validate();
  const AttackContext ctx(q, arch);
  AttackScratch scr(arch);
  return pgd_attack_ctx(ctx, x, label, cfg, variant, rng, judge, scr);
}

AttackResult strongest_attack(const VariationalPosterior& q, std::span<const double> x, int label,
                              const AttackConfig& cfg, RngStream& rng, const Architecture& arch,
                              const PosteriorEnsemble* judge) {
  cfg.validate();
  const AttackContext ctx(q, arch);
  AttackScratch scr(arch);
  return strongest_ctx(ctx, x, label, cfg, rng, judge, scr);
}

std::vector<AttackResult> attack_sweep(const VariationalPosterior& q, const Dataset& points,
                                       const AttackConfig& cfg, const RngStream& base,
                                       const Architecture& arch, const PosteriorEnsemble* judge,
                                       Exec exec) {
  cfg.validate();
  const AttackContext ctx(q, arch);
  const int n = points.size();
  std::vector<AttackResult> results(n);

#ifdef _OPENMP
#pragma omp parallel if (exec == Exec::parallel)
#endif
  {
    AttackScratch scr(arch);
#ifdef _OPENMP
#pragma omp for schedule(dynamic, 4)
#endif
    for (int i = 0; i < n; ++i) {
      RngStream point_rng = base.fork(static_cast<std::uint64_t>(i));
      results[i] = strongest_ctx(ctx, points.input(i), points.labels[i], cfg, point_rng, judge,
                                 scr);
    }
  }
  return results;
}

} // namespace bnnlip
