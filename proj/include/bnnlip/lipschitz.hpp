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
#include <functional>
#include <span>
#include <vector>

#include "bnnlip/exec.hpp"
#include "bnnlip/mfvi.hpp"
#include "bnnlip/network.hpp"
#include "bnnlip/rng.hpp"

namespace bnnlip {

enum class Norm { l2, linf };

struct LipschitzEstimate {
  double value = 0.0;
  Norm norm = Norm::l2;
  int n_points = 0;
  int argmax_i = -1, argmax_j = -1;
};

/// Empirical Lipschitz lower bound over a finite point set:
/// max_{i<j} ||g(x_i) - g(x_j)||_p / ||x_i - x_j||_p with the same p-norm on
/// both sides. g is evaluated once per point; pairs closer than 1e-9 in the
/// input are skipped. Throws std::invalid_argument unless at least one
/// usable pair remains. Ties in the maximum resolve to the lexicographically
/// smallest (i, j), so the argmax pair is reproducible under any thread
/// count.
LipschitzEstimate empirical_lipschitz(
    const std::function<std::vector<double>(std::span<const double>)>& g,
    std::span<const double> points_flat, int dim, Norm norm, Exec exec = Exec::parallel);

struct LayerNormSummary {
  double frobenius = 0.0;  // ||M^l||_F
  std::int64_t count = 0;  // number of weight entries C_l
  double bound = 0.0;      // sqrt(||M^l||_F^2 + C_l * alpha2)
};

std::vector<LayerNormSummary> layer_norm_summary(const ParameterVector& means, double alpha2,
                                                 const Architecture& arch);

/// k^D * prod_l sqrt(||M^l||_F^2 + C_l * alpha2): the per-layer Frobenius
/// bound on the expected weight norm, chained through the depth.
double analytic_lipschitz_bound(const ParameterVector& means, double alpha2,
                                const Architecture& arch);

/// Monte-Carlo estimate of E||M + sqrt(alpha2) E||_F over n_samples
/// standard-normal matrices; sample k draws from rng.fork(k), so the value
/// is independent of the execution policy.
double expected_weight_norm_mc(std::span<const double> m_flat, int rows, int cols, double alpha2,
                               int n_samples, const RngStream& rng, Exec exec = Exec::parallel);

enum class MeasuredFunction { prior_mean_logits, posterior_mean_logits, deterministic_logits };

struct MeasuredFunctionSpec {
  MeasuredFunction kind = MeasuredFunction::deterministic_logits;
  const VariationalPosterior* posterior = nullptr; // posterior_mean_logits
  double prior_alpha2 = 0.0;                       // prior_mean_logits
  const ParameterVector* point = nullptr;          // deterministic_logits
};

/// Binds g to the T-sample frozen mean-logit map of a prior, a posterior, or
/// a point parameter vector; freezing makes g deterministic in x.
PosteriorEnsemble function_under_measurement(const MeasuredFunctionSpec& spec, int T,
                                             RngStream rng, const Architecture& arch);

/// Callable adapter for empirical_lipschitz.
std::function<std::vector<double>(std::span<const double>)> mean_logit_fn(
    const PosteriorEnsemble& ens);

} // namespace bnnlip
