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

#include "bnnlip/mfvi.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include <json.hpp>

namespace bnnlip {

namespace {
// substream layout under RngStream(cfg.seed, 0); the harness forks ids >= 4
constexpr std::uint64_t kInitStream = 1;
constexpr std::uint64_t kShuffleStream = 2;
constexpr std::uint64_t kNoiseStream = 3;
constexpr std::uint64_t kTraceStream = 7;

constexpr double kInitMeanStddev = 0.05;
constexpr double kInitVariance = 1e-3;
} // namespace

double softplus(double x) {
  if (x > 30.0) return x;
  return std::log1p(std::exp(x));
}

double softplus_inverse(double y) {
  if (y > 30.0) return y;
  return std::log(std::expm1(y));
}

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double VariationalPosterior::mean_norm2() const {
  double acc = 0.0;
  for (double v : mean) acc += v * v;
  return std::sqrt(acc);
}

double VariationalPosterior::mean_variance() const {
  double acc = 0.0;
  for (std::size_t i = 0; i < rho.size(); ++i) acc += variance(i);
  return acc / static_cast<double>(rho.size());
}

double kl_diag_gaussian(const VariationalPosterior& q, const PriorConfig& prior) {
  q.validate();
  prior.validate();
  const double log_a2 = std::log(prior.alpha2);
  const double inv_a2 = 1.0 / prior.alpha2;
  double acc = 0.0;
  for (std::size_t i = 0; i < q.size(); ++i) {
    const double s = q.variance(i);
    acc += 0.5 * (log_a2 - std::log(s) - 1.0 + s * inv_a2 + q.mean[i] * q.mean[i] * inv_a2);
  }
  return acc;
}

ParameterVector sample_posterior(const VariationalPosterior& q, RngStream& rng,
                                 const Architecture& arch) {
  if (q.size() != arch.param_count()) {
    throw std::invalid_argument("posterior size does not match architecture");
  }
  ParameterVector theta(arch);
  std::vector<double> eps(q.size());
  rng.fill_normal(eps);
  double* out = theta.data();
  for (std::size_t i = 0; i < q.size(); ++i) out[i] = q.mean[i] + softplus(q.rho[i]) * eps[i];
  return theta;
}

ElboResult elbo_estimate(const VariationalPosterior& q, const PriorConfig& prior,
                         const Dataset& data, std::span<const std::int32_t> batch_indices,
                         int n_total, const Architecture& arch, RngStream& rng, int n_mc,
                         ElboWorkspace& ws, Exec exec) {
  q.validate();
  prior.validate();
  if (batch_indices.empty()) throw std::invalid_argument("elbo_estimate: empty batch");
  if (n_mc < 1) throw std::invalid_argument("elbo_estimate: n_mc must be >= 1");
  const std::size_t p = q.size();
  if (p != arch.param_count()) {
    throw std::invalid_argument("posterior size does not match architecture");
  }

  if (ws.theta.size() != p) ws.theta = ParameterVector(arch);
  ws.eps.resize(p);
  ws.grad_theta.resize(p);
  ws.sigma.resize(p);
  ws.sig.resize(p);
  for (std::size_t i = 0; i < p; ++i) {
    ws.sigma[i] = softplus(q.rho[i]);
    ws.sig[i] = sigmoid(q.rho[i]);
  }

  ElboResult res;
  res.grad_mean.assign(p, 0.0);
  res.grad_rho.assign(p, 0.0);
  const double n_scale = static_cast<double>(n_total);

  double loglik = 0.0;
  for (int t = 0; t < n_mc; ++t) {
    rng.fill_normal(ws.eps);
    double* theta = ws.theta.data();
    for (std::size_t i = 0; i < p; ++i) theta[i] = q.mean[i] + ws.sigma[i] * ws.eps[i];

    const double mean_ce = batch_param_gradient(arch, ws.theta, data.inputs, data.dim,
                                                data.labels, batch_indices, ws.grad_theta,
                                                ws.batch, exec);
    // log-likelihood term is the negative cross-entropy, rescaled to the
    // full set: (N/B) sum_batch = N * batch mean
    loglik += -mean_ce * n_scale;
    for (std::size_t i = 0; i < p; ++i) {
      const double g = -ws.grad_theta[i] * n_scale;
      res.grad_mean[i] += g;
      res.grad_rho[i] += g * ws.eps[i] * ws.sig[i];
    }
  }
  const double inv_mc = 1.0 / static_cast<double>(n_mc);
  loglik *= inv_mc;

  const double inv_a2 = 1.0 / prior.alpha2;
  double kl = 0.0;
  const double log_a2 = std::log(prior.alpha2);
  for (std::size_t i = 0; i < p; ++i) {
    const double s = ws.sigma[i] * ws.sigma[i];
    kl += 0.5 * (log_a2 - std::log(s) - 1.0 + s * inv_a2 + q.mean[i] * q.mean[i] * inv_a2);
    res.grad_mean[i] = res.grad_mean[i] * inv_mc - q.mean[i] * inv_a2;
    // dKL/drho = sigma * sigmoid(rho) * (1/alpha2 - 1/s)
    res.grad_rho[i] =
        res.grad_rho[i] * inv_mc - ws.sigma[i] * ws.sig[i] * (inv_a2 - 1.0 / s);
  }
  res.value = loglik - kl;
  return res;
}

ElboResult elbo_estimate(const VariationalPosterior& q, const PriorConfig& prior,
                         const Dataset& data, std::span<const std::int32_t> batch_indices,
                         int n_total, const Architecture& arch, RngStream& rng, int n_mc) {
  ElboWorkspace ws;
  return elbo_estimate(q, prior, data, batch_indices, n_total, arch, rng, n_mc, ws);
}

double elbo_value(const VariationalPosterior& q, const PriorConfig& prior, const Dataset& data,
                  std::span<const std::int32_t> batch_indices, int n_total,
                  const Architecture& arch, RngStream& rng, int n_mc) {
  q.validate();
  prior.validate();
  if (batch_indices.empty()) throw std::invalid_argument("elbo_value: empty batch");
  const std::size_t p = q.size();
  ParameterVector theta(arch);
  std::vector<double> eps(p);
  Workspace ws(arch);

  double loglik = 0.0;
  for (int t = 0; t < n_mc; ++t) {
    rng.fill_normal(eps);
    double* th = theta.data();
    for (std::size_t i = 0; i < p; ++i) th[i] = q.mean[i] + softplus(q.rho[i]) * eps[i];
    double ce_sum = 0.0;
    std::vector<double> probs(arch.output_dim);
    for (std::int32_t idx : batch_indices) {
      forward_into(arch, theta, data.input(idx), ws);
      softmax_into(ws.logits(), probs);
      ce_sum += cross_entropy(probs, data.labels[idx]);
    }
    loglik += -ce_sum / static_cast<double>(batch_indices.size()) * n_total;
  }
  return loglik / n_mc - kl_diag_gaussian(q, prior);
}

TrainDivergedError::TrainDivergedError(int epoch_, int batch_, double value_)
    : std::runtime_error("ELBO became non-finite at epoch " + std::to_string(epoch_) +
                         ", batch " + std::to_string(batch_) + " (value " +
                         std::to_string(value_) + ")"),
      epoch(epoch_), batch(batch_), value(value_) {}

VariationalPosterior train_mfvi(const Architecture& arch, const Dataset& train_data,
                                const PriorConfig& prior, const TrainConfig& cfg,
                                TrainTrace* trace, Exec exec) {
  arch.validate();
  prior.validate();
  cfg.validate();
  if (train_data.size() == 0) throw std::invalid_argument("train_mfvi: empty training set");
  if (train_data.dim != arch.input_dim || train_data.num_classes > arch.output_dim) {
    throw std::invalid_argument("train_mfvi: dataset does not match architecture");
  }
  const std::size_t p = arch.param_count();
  const int n = train_data.size();

  RngStream root(cfg.seed, 0);
  RngStream init_rng = root.fork(kInitStream);

  VariationalPosterior q;
  q.mean.resize(p);
  init_rng.fill_normal(q.mean);
  for (double& v : q.mean) v *= kInitMeanStddev;
  q.rho.assign(p, softplus_inverse(std::sqrt(kInitVariance)));

  ElboWorkspace ws;
  std::vector<std::int32_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  const double step = cfg.learning_rate / static_cast<double>(n);

  std::uint64_t step_counter = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    RngStream shuffle_rng = root.fork(kShuffleStream).fork(epoch);
    for (int i = n - 1; i > 0; --i) {
      const int j = static_cast<int>(shuffle_rng.next_below(static_cast<std::uint64_t>(i) + 1));
      std::swap(order[i], order[j]);
    }

    int batches = 0;
    for (int start = 0; start < n; start += cfg.batch_size) {
      const int len = std::min(cfg.batch_size, n - start);
      const std::span<const std::int32_t> batch(order.data() + start,
                                                static_cast<std::size_t>(len));
      RngStream noise = root.fork(kNoiseStream).fork(step_counter);
      const ElboResult res =
          elbo_estimate(q, prior, train_data, batch, n, arch, noise, cfg.elbo_mc_samples, ws, exec);
      if (!std::isfinite(res.value)) throw TrainDivergedError(epoch, batches, res.value);

      for (std::size_t i = 0; i < p; ++i) {
        q.mean[i] += step * res.grad_mean[i];
        q.rho[i] += step * res.grad_rho[i];
      }
      ++batches;
      ++step_counter;
    }
    if (trace) {
      std::vector<std::int32_t> all(n);
      std::iota(all.begin(), all.end(), 0);
      RngStream eval_noise = root.fork(kTraceStream); // same draws every epoch
      trace->epoch_elbo.push_back(
          elbo_value(q, prior, train_data, all, n, arch, eval_noise, cfg.elbo_mc_samples));
    }
  }
  return q;
}

std::vector<double> predictive(const VariationalPosterior& q, std::span<const double> x, int T,
                               RngStream& rng, const Architecture& arch) {
  if (T < 1) throw std::invalid_argument("predictive: T must be >= 1");
  Workspace ws(arch);
  ParameterVector theta(arch);
  std::vector<double> eps(q.size());
  std::vector<double> probs(arch.output_dim);
  std::vector<double> acc(arch.output_dim, 0.0);
  for (int t = 0; t < T; ++t) {
    rng.fill_normal(eps);
    double* th = theta.data();
    for (std::size_t i = 0; i < q.size(); ++i) th[i] = q.mean[i] + softplus(q.rho[i]) * eps[i];
    forward_into(arch, theta, x, ws);
    softmax_into(ws.logits(), probs);
    for (int c = 0; c < arch.output_dim; ++c) acc[c] += probs[c];
  }
  for (double& v : acc) v /= static_cast<double>(T);
  return acc;
}

std::vector<double> predictive_logit_mean(const VariationalPosterior& q,
                                          std::span<const double> x, int T, RngStream& rng,
                                          const Architecture& arch) {
  if (T < 1) throw std::invalid_argument("predictive_logit_mean: T must be >= 1");
  Workspace ws(arch);
  ParameterVector theta(arch);
  std::vector<double> eps(q.size());
  std::vector<double> acc(arch.output_dim, 0.0);
  for (int t = 0; t < T; ++t) {
    rng.fill_normal(eps);
    double* th = theta.data();
    for (std::size_t i = 0; i < q.size(); ++i) th[i] = q.mean[i] + softplus(q.rho[i]) * eps[i];
    forward_into(arch, theta, x, ws);
    const auto logits = ws.logits();
    for (int c = 0; c < arch.output_dim; ++c) acc[c] += logits[c];
  }
  for (double& v : acc) v /= static_cast<double>(T);
  return acc;
}

PosteriorEnsemble PosteriorEnsemble::from_posterior(const VariationalPosterior& q, int T,
                                                    RngStream rng, const Architecture& arch) {
  if (T < 1) throw std::invalid_argument("ensemble needs T >= 1");
  PosteriorEnsemble ens;
  ens.arch_ = arch;
  ens.thetas_.reserve(T);
  for (int t = 0; t < T; ++t) ens.thetas_.push_back(sample_posterior(q, rng, arch));
  return ens;
}

PosteriorEnsemble PosteriorEnsemble::from_prior(double alpha2, int T, RngStream rng,
                                                const Architecture& arch) {
  if (T < 1) throw std::invalid_argument("ensemble needs T >= 1");
  if (alpha2 < 0.0) throw std::invalid_argument("prior variance must be nonnegative");
  PosteriorEnsemble ens;
  ens.arch_ = arch;
  ens.thetas_.reserve(T);
  const double sd = std::sqrt(alpha2);
  std::vector<double> eps(arch.param_count());
  for (int t = 0; t < T; ++t) {
    ParameterVector theta(arch);
    rng.fill_normal(eps);
    double* out = theta.data();
    for (std::size_t i = 0; i < eps.size(); ++i) out[i] = sd * eps[i];
    ens.thetas_.push_back(std::move(theta));
  }
  return ens;
}

PosteriorEnsemble PosteriorEnsemble::from_point(ParameterVector theta, const Architecture& arch) {
  PosteriorEnsemble ens;
  ens.arch_ = arch;
  ens.thetas_.push_back(std::move(theta));
  return ens;
}

void PosteriorEnsemble::mean_logits(std::span<const double> x, Workspace& ws,
                                    std::span<double> out) const {
  std::fill(out.begin(), out.end(), 0.0);
  for (const ParameterVector& theta : thetas_) {
    forward_into(arch_, theta, x, ws);
    const auto logits = ws.logits();
    for (std::size_t c = 0; c < out.size(); ++c) out[c] += logits[c];
  }
  const double inv = 1.0 / static_cast<double>(thetas_.size());
  for (double& v : out) v *= inv;
}

void PosteriorEnsemble::mean_probs(std::span<const double> x, Workspace& ws,
                                   std::span<double> out) const {
  std::fill(out.begin(), out.end(), 0.0);
  std::vector<double> probs(out.size());
  for (const ParameterVector& theta : thetas_) {
    forward_into(arch_, theta, x, ws);
    softmax_into(ws.logits(), probs);
    for (std::size_t c = 0; c < out.size(); ++c) out[c] += probs[c];
  }
  const double inv = 1.0 / static_cast<double>(thetas_.size());
  for (double& v : out) v *= inv;
}

std::vector<double> PosteriorEnsemble::mean_logits(std::span<const double> x) const {
  Workspace ws(arch_);
  std::vector<double> out(arch_.output_dim);
  mean_logits(x, ws, out);
  return out;
}

std::vector<double> PosteriorEnsemble::mean_probs(std::span<const double> x) const {
  Workspace ws(arch_);
  std::vector<double> out(arch_.output_dim);
  mean_probs(x, ws, out);
  return out;
}

int PosteriorEnsemble::predict(std::span<const double> x, Workspace& ws) const {
  std::vector<double> probs(arch_.output_dim);
  mean_probs(x, ws, probs);
  int best = 0;
  for (int c = 1; c < arch_.output_dim; ++c) {
    if (probs[c] > probs[best]) best = c;
  }
  return best;
}

namespace {

nlohmann::json arch_to_json(const Architecture& a) {
  return {{"input_dim", a.input_dim},
          {"hidden_widths", a.hidden_widths},
          {"output_dim", a.output_dim},
          {"activation", a.activation == Activation::relu ? "relu" : "tanh"},
          {"activation_lipschitz", a.activation_lipschitz}};
}

Architecture arch_from_json(const nlohmann::json& j) {
  Architecture a;
  a.input_dim = j.at("input_dim").get<int>();
  a.hidden_widths = j.at("hidden_widths").get<std::vector<int>>();
  a.output_dim = j.at("output_dim").get<int>();
  const std::string act = j.at("activation").get<std::string>();
  if (act == "relu") {
    a.activation = Activation::relu;
  } else if (act == "tanh") {
    a.activation = Activation::tanh;
  } else {
    throw std::invalid_argument("unknown activation '" + act + "'");
  }
  a.activation_lipschitz = j.at("activation_lipschitz").get<double>();
  a.validate();
  return a;
}

} // namespace

void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
  nlohmann::json j;
  j["format_version"] = 1;
  j["dataset"] = ckpt.dataset_name;
  j["arch"] = arch_to_json(ckpt.arch);
  j["prior_alpha2"] = ckpt.prior_alpha2;
  j["train"] = {{"epochs", ckpt.train_config.epochs},
                {"batch_size", ckpt.train_config.batch_size},
                {"learning_rate", ckpt.train_config.learning_rate},
                {"elbo_mc_samples", ckpt.train_config.elbo_mc_samples},
                {"seed", ckpt.train_config.seed}};
  j["mean"] = ckpt.posterior.mean;
  j["rho"] = ckpt.posterior.rho;
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write checkpoint " + path);
  out << j.dump(2) << "\n";
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open checkpoint " + path);
  nlohmann::json j;
  in >> j;
  if (j.at("format_version").get<int>() != 1) {
    throw std::runtime_error("unsupported checkpoint format version in " + path);
  }
  Checkpoint ckpt;
  ckpt.dataset_name = j.at("dataset").get<std::string>();
  ckpt.arch = arch_from_json(j.at("arch"));
  ckpt.prior_alpha2 = j.at("prior_alpha2").get<double>();
  const auto& t = j.at("train");
  ckpt.train_config.epochs = t.at("epochs").get<int>();
  ckpt.train_config.batch_size = t.at("batch_size").get<int>();
  ckpt.train_config.learning_rate = t.at("learning_rate").get<double>();
  ckpt.train_config.elbo_mc_samples = t.at("elbo_mc_samples").get<int>();
  ckpt.train_config.seed = t.at("seed").get<std::uint64_t>();
  ckpt.posterior.mean = j.at("mean").get<std::vector<double>>();
  ckpt.posterior.rho = j.at("rho").get<std::vector<double>>();
  ckpt.posterior.validate();
  if (ckpt.posterior.size() != ckpt.arch.param_count()) {
    throw std::runtime_error("checkpoint parameter count does not match architecture in " + path);
  }
  return ckpt;
}

} // namespace bnnlip
