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

#include <span>
#include <string>
#include <vector>

#include "bnnlip/data.hpp"
#include "bnnlip/exec.hpp"
#include "bnnlip/mfvi.hpp"
#include "bnnlip/network.hpp"
#include "bnnlip/rng.hpp"

namespace bnnlip {

struct AttackConfig {
  double epsilon = 0.1; // L-inf perturbation budget
  int iterations = 20;
  double step_size = 0.025; // epsilon / 4
  int mc_samples = 10;      // T for expected gradients and fallback judging
  double box_lo = 0.0, box_hi = 1.0;
  void validate() const;
};

enum class AttackVariant { expected_sign, expected_nosign, mean_pgd };

const char* attack_variant_name(AttackVariant v);

struct AttackResult {
  std::vector<double> x_adv;
  bool success = false;     // prediction at x_adv differs from the clean prediction
  double adv_loss = 0.0;    // judge cross-entropy at x_adv against the true label
  int predicted_class = -1; // judge argmax at x_adv
  int clean_class = -1;     // judge argmax at the clean point (the reference class)
  AttackVariant variant = AttackVariant::expected_sign;
  bool aborted = false;     // non-finite gradient; point reported as robust
  std::string note;
};

/// x + U(-epsilon, epsilon) per coordinate, clipped to the box. Inside the
/// L-inf ball by construction.
std::vector<double> random_init(std::span<const double> x, double epsilon, RngStream& rng,
                                double box_lo = 0.0, double box_hi = 1.0);

/// (1/T) sum_t grad_input(theta_t, x, label) over fresh posterior draws.
std::vector<double> expected_input_gradient(const VariationalPosterior& q,
                                            std::span<const double> x, int label, int T,
                                            RngStream& rng, const Architecture& arch);

/// Projected gradient ascent on the cross-entropy of the true label, from a
/// random start, projected each step onto the epsilon-ball around x
/// intersected with the box. Step directions per variant:
///   expected_sign   sign of the expected input gradient (sign(0) = 0)
///   expected_nosign expected gradient rescaled to unit L-inf norm
///   mean_pgd        sign of the deterministic gradient at the posterior mean
/// Success means the judged prediction at x_adv differs from the judged
/// prediction at the clean x. Judging uses `judge` when given (a frozen
/// predictive shared across points); otherwise a fresh cfg.mc_samples
/// predictive estimate, with the same draws replayed for the clean and the
/// attacked point so the comparison is apples to apples.
AttackResult pgd_attack(const VariationalPosterior& q, std::span<const double> x, int label,
                        const AttackConfig& cfg, AttackVariant variant, RngStream& rng,
                        const Architecture& arch, const PosteriorEnsemble* judge = nullptr);

/// Runs all three variants; returns the lexicographic maximum of
/// (success, adv_loss), so a successful attack always beats a failed one.
AttackResult strongest_attack(const VariationalPosterior& q, std::span<const double> x, int label,
                              const AttackConfig& cfg, RngStream& rng, const Architecture& arch,
                              const PosteriorEnsemble* judge = nullptr);

/// strongest_attack on every point of a dataset. Point i uses base.fork(i),
/// so any execution order gives identical results.
std::vector<AttackResult> attack_sweep(const VariationalPosterior& q, const Dataset& points,
                                       const AttackConfig& cfg, const RngStream& base,
                                       const Architecture& arch, const PosteriorEnsemble* judge,
                                       Exec exec = Exec::parallel);

} // namespace bnnlip
