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

#include "bnnlip/network.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace bnnlip {

namespace {
constexpr double kLogFloor = 1e-12;

int max_threads() {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}
} // namespace

int Architecture::layer_input(int layer) const {
  return layer == 0 ? input_dim : hidden_widths[layer - 1];
}

int Architecture::layer_output(int layer) const {
  return layer == depth() - 1 ? output_dim : hidden_widths[layer];
}

std::size_t Architecture::param_count() const {
  std::size_t p = 0;
  for (int l = 0; l < depth(); ++l) {
    p += static_cast<std::size_t>(layer_output(l)) * layer_input(l) + layer_output(l);
  }
  return p;
}

void Architecture::validate() const {
  if (input_dim < 1) throw std::invalid_argument("architecture: input_dim must be positive");
  if (output_dim < 1) throw std::invalid_argument("architecture: output_dim must be positive");
  for (int w : hidden_widths) {
    if (w < 1) throw std::invalid_argument("architecture: hidden widths must be positive");
  }
  if (activation_lipschitz < 0.0) {
    throw std::invalid_argument("architecture: activation Lipschitz constant must be nonnegative");
  }
  if ((activation == Activation::relu || activation == Activation::tanh) &&
      activation_lipschitz != 1.0) {
    throw std::invalid_argument("architecture: relu/tanh activations have k = 1");
  }
}

ParameterVector::ParameterVector(const Architecture& arch) {
  layout_.resize(arch.depth());
  std::size_t off = 0;
  for (int l = 0; l < arch.depth(); ++l) {
    auto& lay = layout_[l];
    lay.out = arch.layer_output(l);
    lay.in = arch.layer_input(l);
    lay.w_off = off;
    off += static_cast<std::size_t>(lay.out) * lay.in;
    lay.b_off = off;
    off += static_cast<std::size_t>(lay.out);
  }
  values_.assign(off, 0.0);
}

std::span<double> ParameterVector::weights(int layer) {
  const auto& lay = layout_[layer];
  return {values_.data() + lay.w_off, static_cast<std::size_t>(lay.out) * lay.in};
}
std::span<const double> ParameterVector::weights(int layer) const {
  const auto& lay = layout_[layer];
  return {values_.data() + lay.w_off, static_cast<std::size_t>(lay.out) * lay.in};
}
std::span<double> ParameterVector::bias(int layer) {
  const auto& lay = layout_[layer];
  return {values_.data() + lay.b_off, static_cast<std::size_t>(lay.out)};
}
std::span<const double> ParameterVector::bias(int layer) const {
  const auto& lay = layout_[layer];
  return {values_.data() + lay.b_off, static_cast<std::size_t>(lay.out)};
}

Workspace::Workspace(const Architecture& arch) {
  const int d = arch.depth();
  pre_.resize(d);
  post_.resize(d > 1 ? d - 1 : 0);
  int widest = arch.output_dim;
  for (int l = 0; l < d; ++l) {
    pre_[l].assign(arch.layer_output(l), 0.0);
    if (l < d - 1) post_[l].assign(arch.layer_output(l), 0.0);
    widest = std::max(widest, arch.layer_output(l));
  }
  delta_a_.assign(widest, 0.0);
  delta_b_.assign(widest, 0.0);
  probs_.assign(arch.output_dim, 0.0);
}

// Dot product with eight independent accumulators: a fixed summation order
// that the vectorizer can keep in SIMD lanes without reassociating.
inline double dot8(const double* a, const double* b, int n) {
  double s0 = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0;
  double s4 = 0.0, s5 = 0.0, s6 = 0.0, s7 = 0.0;
  int i = 0;
  for (; i + 8 <= n; i += 8) {
    s0 += a[i] * b[i];
    s1 += a[i + 1] * b[i + 1];
    s2 += a[i + 2] * b[i + 2];
    s3 += a[i + 3] * b[i + 3];
    s4 += a[i + 4] * b[i + 4];
    s5 += a[i + 5] * b[i + 5];
    s6 += a[i + 6] * b[i + 6];
    s7 += a[i + 7] * b[i + 7];
  }
  double tail = 0.0;
  for (; i < n; ++i) tail += a[i] * b[i];
  return (((s0 + s4) + (s1 + s5)) + ((s2 + s6) + (s3 + s7))) + tail;
}

// All per-example math lives in NetOps. The batch kernel's serial and
// parallel paths both come through these noinline entry points, so the two
// paths execute the same machine code per example and agree bit for bit.
struct NetOps {
  [[gnu::noinline]] static void forward(const Architecture& arch, const ParameterVector& theta,
                                        std::span<const double> x, Workspace& ws) {
    const int d = arch.depth();
    const double* h = x.data();
    for (int l = 0; l < d; ++l) {
      const int out = arch.layer_output(l);
      const int in = arch.layer_input(l);
      const double* w = theta.weights(l).data();
      const double* b = theta.bias(l).data();
      double* z = ws.pre_[l].data();
      for (int o = 0; o < out; ++o) {
        const double* row = w + static_cast<std::size_t>(o) * in;
        z[o] = dot8(row, h, in) + b[o];
      }
      if (l < d - 1) {
        double* a = ws.post_[l].data();
        if (arch.activation == Activation::relu) {
          for (int o = 0; o < out; ++o) a[o] = z[o] > 0.0 ? z[o] : 0.0;
        } else {
          for (int o = 0; o < out; ++o) a[o] = std::tanh(z[o]);
        }
        h = a;
      }
    }
  }

  static void softmax_into(std::span<const double> logits, std::span<double> probs) {
    double mx = logits[0];
    for (double v : logits) mx = std::max(mx, v);
    double sum = 0.0;
    for (std::size_t c = 0; c < logits.size(); ++c) {
      probs[c] = std::exp(logits[c] - mx);
      sum += probs[c];
    }
    const double inv = 1.0 / sum;
    for (std::size_t c = 0; c < logits.size(); ++c) probs[c] *= inv;
  }

  // Backward through softmax + floored cross-entropy: with p = softmax(z) and
  // L = -log(p_y + floor), dL/dz_c = (p_y / (p_y + floor)) * (p_c - [c == y]).
  static double loss_and_delta(const Architecture& arch, int label, Workspace& ws) {
    softmax_into(ws.pre_.back(), ws.probs_);
    const double py = ws.probs_[label];
    const double loss = std::max(0.0, -std::log(py + kLogFloor));
    const double scale = py / (py + kLogFloor);
    double* delta = ws.delta_a_.data();
    for (int c = 0; c < arch.output_dim; ++c) {
      delta[c] = scale * (ws.probs_[c] - (c == label ? 1.0 : 0.0));
    }
    return loss;
  }

  // delta_prev = (W_l^T delta) masked by the activation derivative of layer
  // l-1; phi'(0) = 0 for relu.
  static void backprop_delta(const Architecture& arch, const ParameterVector& theta, int l,
                             const double* delta, double* delta_prev, Workspace& ws) {
    const int out = arch.layer_output(l);
    const int in = arch.layer_input(l);
    const double* w = theta.weights(l).data();
    for (int i = 0; i < in; ++i) delta_prev[i] = 0.0;
    for (int o = 0; o < out; ++o) {
      const double* row = w + static_cast<std::size_t>(o) * in;
      const double d = delta[o];
      for (int i = 0; i < in; ++i) delta_prev[i] += d * row[i];
    }
    const double* z = ws.pre_[l - 1].data();
    if (arch.activation == Activation::relu) {
      for (int i = 0; i < in; ++i) delta_prev[i] = z[i] > 0.0 ? delta_prev[i] : 0.0;
    } else {
      const double* a = ws.post_[l - 1].data();
      for (int i = 0; i < in; ++i) delta_prev[i] *= 1.0 - a[i] * a[i];
    }
  }

  [[gnu::noinline]] static double backward_params(const Architecture& arch,
                                                  const ParameterVector& theta,
                                                  std::span<const double> x, int label,
                                                  Workspace& ws, std::span<double> grad_accum) {
    const double loss = loss_and_delta(arch, label, ws);
    double* delta = ws.delta_a_.data();
    double* delta_next = ws.delta_b_.data();
    for (int l = arch.depth() - 1; l >= 0; --l) {
      const int out = arch.layer_output(l);
      const int in = arch.layer_input(l);
      const double* h = l == 0 ? x.data() : ws.post_[l - 1].data();
      const std::size_t w_off = theta.weights(l).data() - theta.data();
      const std::size_t b_off = theta.bias(l).data() - theta.data();
      double* gw = grad_accum.data() + w_off;
      double* gb = grad_accum.data() + b_off;
      for (int o = 0; o < out; ++o) {
        const double d = delta[o];
        gb[o] += d;
        double* grow = gw + static_cast<std::size_t>(o) * in;
        for (int i = 0; i < in; ++i) grow[i] += d * h[i];
      }
      if (l > 0) {
        backprop_delta(arch, theta, l, delta, delta_next, ws);
        std::swap(delta, delta_next);
      }
    }
    return loss;
  }

  [[gnu::noinline]] static double backward_input(const Architecture& arch,
                                                 const ParameterVector& theta,
                                                 std::span<const double> /*x*/, int label,
                                                 Workspace& ws, std::span<double> grad_x) {
    const double loss = loss_and_delta(arch, label, ws);
    double* delta = ws.delta_a_.data();
    double* delta_next = ws.delta_b_.data();
    for (int l = arch.depth() - 1; l > 0; --l) {
      backprop_delta(arch, theta, l, delta, delta_next, ws);
      std::swap(delta, delta_next);
    }
    // input layer: grad_x = W_1^T delta, no activation at the input
    const int out = arch.layer_output(0);
    const int in = arch.layer_input(0);
    const double* w = theta.weights(0).data();
    for (int i = 0; i < in; ++i) grad_x[i] = 0.0;
    for (int o = 0; o < out; ++o) {
      const double* row = w + static_cast<std::size_t>(o) * in;
      const double d = delta[o];
      for (int i = 0; i < in; ++i) grad_x[i] += d * row[i];
    }
    return loss;
  }
};

void forward_into(const Architecture& arch, const ParameterVector& theta,
                  std::span<const double> x, Workspace& ws) {
  NetOps::forward(arch, theta, x, ws);
}

double loss_grad_params_into(const Architecture& arch, const ParameterVector& theta,
                             std::span<const double> x, int label, Workspace& ws,
                             std::span<double> grad_accum) {
  NetOps::forward(arch, theta, x, ws);
  return NetOps::backward_params(arch, theta, x, label, ws, grad_accum);
}

double loss_grad_input_into(const Architecture& arch, const ParameterVector& theta,
                            std::span<const double> x, int label, Workspace& ws,
                            std::span<double> grad_x) {
  NetOps::forward(arch, theta, x, ws);
  return NetOps::backward_input(arch, theta, x, label, ws, grad_x);
}

namespace {

void check_shapes(const ParameterVector& theta, std::span<const double> x,
                  const Architecture& arch) {
  arch.validate();
  if (x.size() != static_cast<std::size_t>(arch.input_dim)) {
    throw std::invalid_argument("input has dimension " + std::to_string(x.size()) +
                                ", architecture expects " + std::to_string(arch.input_dim));
  }
  if (theta.size() != arch.param_count()) {
    throw std::invalid_argument("parameter vector has " + std::to_string(theta.size()) +
                                " entries, architecture expects " +
                                std::to_string(arch.param_count()));
  }
}

void check_label(int label, std::size_t classes) {
  if (label < 0 || static_cast<std::size_t>(label) >= classes) {
    throw std::invalid_argument("label " + std::to_string(label) + " out of range for " +
                                std::to_string(classes) + " classes");
  }
}

} // namespace

std::vector<double> forward_logits(const ParameterVector& theta, std::span<const double> x,
                                   const Architecture& arch) {
  check_shapes(theta, x, arch);
  Workspace ws(arch);
  NetOps::forward(arch, theta, x, ws);
  return {ws.logits().begin(), ws.logits().end()};
}

std::vector<double> softmax(std::span<const double> logits) {
  std::vector<double> probs(logits.size());
  NetOps::softmax_into(logits, probs);
  return probs;
}

void softmax_into(std::span<const double> logits, std::span<double> probs) {
  NetOps::softmax_into(logits, probs);
}

double cross_entropy(std::span<const double> probs, int label) {
  check_label(label, probs.size());
  return std::max(0.0, -std::log(probs[label] + kLogFloor));
}

std::vector<double> grad_params(const ParameterVector& theta, std::span<const double> x,
                                int label, const Architecture& arch) {
  check_shapes(theta, x, arch);
  check_label(label, arch.output_dim);
  Workspace ws(arch);
  std::vector<double> grad(theta.size(), 0.0);
  loss_grad_params_into(arch, theta, x, label, ws, grad);
  return grad;
}

std::vector<double> grad_input(const ParameterVector& theta, std::span<const double> x,
                               int label, const Architecture& arch) {
  check_shapes(theta, x, arch);
  check_label(label, arch.output_dim);
  Workspace ws(arch);
  std::vector<double> grad(x.size(), 0.0);
  loss_grad_input_into(arch, theta, x, label, ws, grad);
  return grad;
}

double batch_param_gradient(const Architecture& arch, const ParameterVector& theta,
                            std::span<const double> inputs_flat, int input_dim,
                            std::span<const int> labels,
                            std::span<const std::int32_t> batch_indices,
                            std::span<double> mean_grad_out, BatchGradWorkspace& ws,
                            Exec exec) {
  const std::size_t p = theta.size();
  const std::int64_t n = static_cast<std::int64_t>(batch_indices.size());
  const int threads = exec == Exec::parallel ? max_threads() : 1;

  // Both policies run the same algorithm: per-example gradient rows, then a
  // reduction in example order. Only the row computation fans out.
  while (ws.per_thread.size() < static_cast<std::size_t>(std::max(threads, 1))) {
    ws.per_thread.emplace_back(arch);
  }
  if (ws.slab.size() < static_cast<std::size_t>(n) * p) {
    ws.slab.assign(static_cast<std::size_t>(n) * p, 0.0);
  }
  if (ws.losses.size() < static_cast<std::size_t>(n)) ws.losses.assign(n, 0.0);

#ifdef _OPENMP
#pragma omp parallel for schedule(static) num_threads(threads) if (threads > 1)
#endif
  for (std::int64_t k = 0; k < n; ++k) {
#ifdef _OPENMP
    Workspace& w = ws.per_thread[omp_get_thread_num()];
#else
    Workspace& w = ws.per_thread[0];
#endif
    const std::int32_t idx = batch_indices[k];
    const std::span<const double> x = inputs_flat.subspan(
        static_cast<std::size_t>(idx) * input_dim, static_cast<std::size_t>(input_dim));
    std::span<double> row(ws.slab.data() + static_cast<std::size_t>(k) * p, p);
    std::fill(row.begin(), row.end(), 0.0);
    ws.losses[k] = loss_grad_params_into(arch, theta, x, labels[idx], w, row);
  }

  std::fill(mean_grad_out.begin(), mean_grad_out.end(), 0.0);
  double loss_sum = 0.0;
  for (std::int64_t k = 0; k < n; ++k) {
    const double* row = ws.slab.data() + static_cast<std::size_t>(k) * p;
    double* out = mean_grad_out.data();
    for (std::size_t j = 0; j < p; ++j) out[j] += row[j];
    loss_sum += ws.losses[k];
  }

  const double inv = 1.0 / static_cast<double>(n);
  for (std::size_t j = 0; j < p; ++j) mean_grad_out[j] *= inv;
  return loss_sum * inv;
}

} // namespace bnnlip
