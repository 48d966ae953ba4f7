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

#include "bnnlip/lipschitz.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace bnnlip {

namespace {

constexpr double kMinPairDistance = 1e-9;

double norm_of_diff(const double* a, const double* b, int dim, Norm norm) {
  if (norm == Norm::l2) {
    double acc = 0.0;
    for (int k = 0; k < dim; ++k) {
      const double d = a[k] - b[k];
      acc += d * d;
    }
    return std::sqrt(acc);
  }
  double mx = 0.0;
  for (int k = 0; k < dim; ++k) mx = std::max(mx, std::abs(a[k] - b[k]));
  return mx;
}

} // namespace

LipschitzEstimate empirical_lipschitz(
    const std::function<std::vector<double>(std::span<const double>)>& g,
    std::span<const double> points_flat, int dim, Norm norm, Exec exec) {
  if (dim < 1) throw std::invalid_argument("empirical_lipschitz: dim must be positive");
  const int n = static_cast<int>(points_flat.size() / dim);
  if (n < 2) throw std::invalid_argument("empirical_lipschitz: need at least 2 points");

  // evaluate g once per point
  std::vector<double> gy;
  int out_dim = 0;
  for (int i = 0; i < n; ++i) {
    const std::vector<double> y =
        g(points_flat.subspan(static_cast<std::size_t>(i) * dim, static_cast<std::size_t>(dim)));
    if (i == 0) {
      out_dim = static_cast<int>(y.size());
      gy.resize(static_cast<std::size_t>(n) * out_dim);
    }
    std::copy(y.begin(), y.end(), gy.begin() + static_cast<std::size_t>(i) * out_dim);
  }

  // per-i best over j > i, then a fixed-order merge
  std::vector<double> best_val(n, -1.0);
  std::vector<int> best_j(n, -1);
  std::vector<std::int64_t> usable(n, 0);

#ifdef _OPENMP
#pragma omp parallel for schedule(static) if (exec == Exec::parallel)
#endif
  for (int i = 0; i < n - 1; ++i) {
    const double* xi = points_flat.data() + static_cast<std::size_t>(i) * dim;
    const double* yi = gy.data() + static_cast<std::size_t>(i) * out_dim;
    double local = -1.0;
    int local_j = -1;
    std::int64_t local_usable = 0;
    for (int j = i + 1; j < n; ++j) {
      const double* xj = points_flat.data() + static_cast<std::size_t>(j) * dim;
      const double dx = norm_of_diff(xi, xj, dim, norm);
      if (dx < kMinPairDistance) continue;
      ++local_usable;
      const double* yj = gy.data() + static_cast<std::size_t>(j) * out_dim;
      const double dy = norm_of_diff(yi, yj, out_dim, norm);
      const double ratio = dy / dx;
      if (ratio > local) {
        local = ratio;
        local_j = j;
      }
    }
    best_val[i] = local;
    best_j[i] = local_j;
    usable[i] = local_usable;
  }

  LipschitzEstimate est;
  est.norm = norm;
  est.n_points = n;
  std::int64_t usable_pairs = 0;
  double best = -1.0;
  for (int i = 0; i < n - 1; ++i) {
    usable_pairs += usable[i];
    if (best_j[i] >= 0 && best_val[i] > best) {
      best = best_val[i];
      est.argmax_i = i;
      est.argmax_j = best_j[i];
    }
  }
  if (usable_pairs == 0) {
    throw std::invalid_argument("empirical_lipschitz: fewer than 2 usable (distinct) points");
  }
  est.value = best;
  return est;
}

std::vector<LayerNormSummary> layer_norm_summary(const ParameterVector& means, double alpha2,
                                                 const Architecture& arch) {
  if (alpha2 < 0.0) throw std::invalid_argument("alpha2 must be nonnegative");
  std::vector<LayerNormSummary> layers;
  for (int l = 0; l < arch.depth(); ++l) {
    LayerNormSummary s;
    double acc = 0.0;
    for (double v : means.weights(l)) acc += v * v;
    s.frobenius = std::sqrt(acc);
    s.count = static_cast<std::int64_t>(means.weights(l).size());
    s.bound = std::sqrt(acc + static_cast<double>(s.count) * alpha2);
    layers.push_back(s);
  }
  return layers;
}

double analytic_lipschitz_bound(const ParameterVector& means, double alpha2,
                                const Architecture& arch) {
  double bound = std::pow(arch.activation_lipschitz, arch.depth());
  for (const LayerNormSummary& s : layer_norm_summary(means, alpha2, arch)) bound *= s.bound;
  return bound;
}

double expected_weight_norm_mc(std::span<const double> m_flat, int rows, int cols, double alpha2,
                               int n_samples, const RngStream& rng, Exec exec) {
  if (n_samples < 1) throw std::invalid_argument("expected_weight_norm_mc: n_samples >= 1");
  if (m_flat.size() != static_cast<std::size_t>(rows) * cols) {
    throw std::invalid_argument("expected_weight_norm_mc: matrix shape mismatch");
  }
  if (alpha2 < 0.0) throw std::invalid_argument("alpha2 must be nonnegative");
  const double sd = std::sqrt(alpha2);
  const std::size_t c = m_flat.size();
  std::vector<double> norms(n_samples);

#ifdef _OPENMP
#pragma omp parallel if (exec == Exec::parallel)
#endif
  {
    std::vector<double> eps(c);
#ifdef _OPENMP
#pragma omp for schedule(static)
#endif
    for (int k = 0; k < n_samples; ++k) {
      RngStream sub = rng.fork(static_cast<std::uint64_t>(k));
      sub.fill_normal(eps);
      double acc = 0.0;
      for (std::size_t j = 0; j < c; ++j) {
        const double w = m_flat[j] + sd * eps[j];
        acc += w * w;
      }
      norms[k] = std::sqrt(acc);
    }
  }

  double sum = 0.0;
  for (double v : norms) sum += v; // fixed order
  return sum / static_cast<double>(n_samples);
}

PosteriorEnsemble function_under_measurement(const MeasuredFunctionSpec& spec, int T,
                                             RngStream rng, const Architecture& arch) {
  switch (spec.kind) {
    case MeasuredFunction::prior_mean_logits:
      return PosteriorEnsemble::from_prior(spec.prior_alpha2, T, rng, arch);
    case MeasuredFunction::posterior_mean_logits:
      if (!spec.posterior) throw std::invalid_argument("posterior_mean_logits needs a posterior");
      return PosteriorEnsemble::from_posterior(*spec.posterior, T, rng, arch);
    case MeasuredFunction::deterministic_logits:
      if (!spec.point) throw std::invalid_argument("deterministic_logits needs parameters");
      return PosteriorEnsemble::from_point(*spec.point, arch);
  }
  throw std::invalid_argument("unknown measured function kind");
}

std::function<std::vector<double>(std::span<const double>)> mean_logit_fn(
    const PosteriorEnsemble& ens) {
  return [&ens](std::span<const double> x) { return ens.mean_logits(x); };
}

} // namespace bnnlip
