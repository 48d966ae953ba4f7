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
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "bnnlip/data.hpp"
#include "bnnlip/exec.hpp"
#include "bnnlip/network.hpp"
#include "bnnlip/rng.hpp"

namespace bnnlip {

/// Zero-mean isotropic Gaussian prior over all parameters, variance alpha2.
struct PriorConfig {
  double alpha2 = 1.0;
  void validate() const {
    if (!(alpha2 > 0.0)) throw std::invalid_argument("prior variance must be positive");
  }
};

double softplus(double x);
double softplus_inverse(double y);
double sigmoid(double x);

/// Mean-field Gaussian posterior: theta_i ~ N(mean_i, s_i) with the variance
/// parameterized as s_i = softplus(rho_i)^2 to stay positive.
struct VariationalPosterior {
  std::vector<double> mean;
  std::vector<double> rho;

  std::size_t size() const { return mean.size(); }
  double stddev(std::size_t i) const { return softplus(rho[i]); }
  double variance(std::size_t i) const {
    const double sd = softplus(rho[i]);
    return sd * sd;
  }
  double mean_norm2() const;      // ||m||_2
  double mean_variance() const;   // average of s
  void validate() const {
    if (mean.size() != rho.size()) {
      throw std::invalid_argument("posterior mean/rho length mismatch");
    }
  }
};

struct TrainConfig {
  int epochs = 100;
  int batch_size = 128;
  double learning_rate = 0.05;
  int elbo_mc_samples = 1;
  std::uint64_t seed = 0;
  void validate() const {
    if (epochs < 1 || batch_size < 1 || elbo_mc_samples < 1) {
      throw std::invalid_argument("train config counts must be >= 1");
    }
    if (!(learning_rate > 0.0)) throw std::invalid_argument("learning rate must be positive");
  }
};

/// KL(q || N(0, alpha2 I)) in closed form:
/// 1/2 sum_i [ ln(alpha2 / s_i) - 1 + s_i/alpha2 + m_i^2/alpha2 ].
double kl_diag_gaussian(const VariationalPosterior& q, const PriorConfig& prior);

/// Reparameterized draw theta = m + sqrt(s) .* eps.
ParameterVector sample_posterior(const VariationalPosterior& q, RngStream& rng,
                                 const Architecture& arch);

struct ElboResult {
  double value = 0.0;
  std::vector<double> grad_mean;
  std::vector<double> grad_rho;
};

class ElboWorkspace {
 public:
  ParameterVector theta;
  std::vector<double> eps;
  std::vector<double> grad_theta;
  std::vector<double> sigma, sig;
  BatchGradWorkspace batch;
};

/// Minibatch ELBO estimate: (n_total / |batch|) * sum_batch log f^{y}(x|theta_t)
/// averaged over n_mc reparameterized samples, minus the closed-form KL.
/// Gradients flow to (mean, rho) through the sampling path.
ElboResult elbo_estimate(const VariationalPosterior& q, const PriorConfig& prior,
                         const Dataset& data, std::span<const std::int32_t> batch_indices,
                         int n_total, const Architecture& arch, RngStream& rng, int n_mc,
                         ElboWorkspace& ws, Exec exec = Exec::parallel);
ElboResult elbo_estimate(const VariationalPosterior& q, const PriorConfig& prior,
                         const Dataset& data, std::span<const std::int32_t> batch_indices,
                         int n_total, const Architecture& arch, RngStream& rng, int n_mc);

/// Value-only ELBO estimate (no gradients), same contract as elbo_estimate.
double elbo_value(const VariationalPosterior& q, const PriorConfig& prior, const Dataset& data,
                  std::span<const std::int32_t> batch_indices, int n_total,
                  const Architecture& arch, RngStream& rng, int n_mc);

class TrainDivergedError : public std::runtime_error {
 public:
  TrainDivergedError(int epoch, int batch, double value);
  int epoch, batch;
  double value;
};

struct TrainTrace {
  /// End-of-epoch ELBO over the full training set, evaluated with a noise
  /// stream that is identical across epochs, so entries are comparable.
  std::vector<double> epoch_elbo;
};

/// Minibatch SGD ascent on the ELBO for cfg.epochs. The update step is the
/// ELBO gradient scaled by 1/n so the learning rate is a per-example rate.
/// Fully deterministic given cfg.seed: initialization, shuffling and sampling
/// noise each use a dedicated substream of RngStream(cfg.seed, 0).
VariationalPosterior train_mfvi(const Architecture& arch, const Dataset& train_data,
                                const PriorConfig& prior, const TrainConfig& cfg,
                                TrainTrace* trace = nullptr, Exec exec = Exec::parallel);

/// Monte-Carlo predictive distribution: mean softmax over T posterior draws.
std::vector<double> predictive(const VariationalPosterior& q, std::span<const double> x, int T,
                               RngStream& rng, const Architecture& arch);

/// Mean pre-softmax logits over T posterior draws.
std::vector<double> predictive_logit_mean(const VariationalPosterior& q,
                                          std::span<const double> x, int T, RngStream& rng,
                                          const Architecture& arch);

/// T parameter draws frozen at construction. Evaluating the frozen ensemble
/// makes the MC-mean logits and MC-mean probabilities deterministic functions
/// of x, which is what both the accuracy metrics and the Lipschitz estimates
/// need.
class PosteriorEnsemble {
 public:
  static PosteriorEnsemble from_posterior(const VariationalPosterior& q, int T, RngStream rng,
                                          const Architecture& arch);
  static PosteriorEnsemble from_prior(double alpha2, int T, RngStream rng,
                                      const Architecture& arch);
  static PosteriorEnsemble from_point(ParameterVector theta, const Architecture& arch);

  int samples() const { return static_cast<int>(thetas_.size()); }
  const Architecture& arch() const { return arch_; }

  void mean_logits(std::span<const double> x, Workspace& ws, std::span<double> out) const;
  void mean_probs(std::span<const double> x, Workspace& ws, std::span<double> out) const;
  std::vector<double> mean_logits(std::span<const double> x) const;
  std::vector<double> mean_probs(std::span<const double> x) const;
  /// argmax of mean_probs; ties resolve to the smallest class index.
  int predict(std::span<const double> x, Workspace& ws) const;

 private:
  Architecture arch_;
  std::vector<ParameterVector> thetas_;
};

struct Checkpoint {
  std::string dataset_name;
  Architecture arch;
  double prior_alpha2 = 1.0;
  TrainConfig train_config;
  VariationalPosterior posterior;
};

/// Versioned JSON record; doubles round-trip exactly.
void save_checkpoint(const Checkpoint& ckpt, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

} // namespace bnnlip
