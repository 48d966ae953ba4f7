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

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "bnnlip/exec.hpp"

namespace bnnlip {

enum class Activation { relu, tanh };

/// Fixed feed-forward topology: input -> hidden widths -> output logits.
/// Depth D counts weight layers, so a net with no hidden layer has D = 1.
struct Architecture {
  int input_dim = 0;
  std::vector<int> hidden_widths;
  int output_dim = 0;
  Activation activation = Activation::relu;
  double activation_lipschitz = 1.0; // k; equals 1 for relu and tanh

  int depth() const { return static_cast<int>(hidden_widths.size()) + 1; }
  int layer_input(int layer) const;
  int layer_output(int layer) const;
  std::size_t param_count() const;
  /// Throws std::invalid_argument on non-positive widths or a k that does
  /// not match the activation.
  void validate() const;
};

/// Flat parameter vector theta laid out as (W1, b1, W2, b2, ..., WD, bD)
/// with row-major out x in weight blocks. Layer spans tile the flat vector
/// exactly.
class ParameterVector {
 public:
  ParameterVector() = default;
  explicit ParameterVector(const Architecture& arch); // zero parameters

  std::size_t size() const { return values_.size(); }
  int depth() const { return static_cast<int>(layout_.size()); }
  std::span<double> flat() { return values_; }
  std::span<const double> flat() const { return values_; }
  double* data() { return values_.data(); }
  const double* data() const { return values_.data(); }

  std::span<double> weights(int layer);
  std::span<const double> weights(int layer) const;
  std::span<double> bias(int layer);
  std::span<const double> bias(int layer) const;
  int rows(int layer) const { return layout_[layer].out; }
  int cols(int layer) const { return layout_[layer].in; }

 private:
  struct LayerLayout {
    int out = 0, in = 0;
    std::size_t w_off = 0, b_off = 0;
  };
  std::vector<double> values_;
  std::vector<LayerLayout> layout_;
};

/// Reusable per-thread scratch for forward/backward passes.
class Workspace {
 public:
  Workspace() = default;
  explicit Workspace(const Architecture& arch);

  std::span<const double> logits() const { return pre_.back(); }
  std::span<const double> probs() const { return probs_; }

 private:
  friend struct NetOps;
  std::vector<std::vector<double>> pre_;  // pre-activations per layer
  std::vector<std::vector<double>> post_; // activations per hidden layer
  std::vector<double> delta_a_, delta_b_;
  std::vector<double> probs_;
};

// -- spec-level operations ---------------------------------------------------

/// W_D phi(... phi(W_1 x + b_1) ...) + b_D. Throws on shape mismatch.
std::vector<double> forward_logits(const ParameterVector& theta, std::span<const double> x,
                                   const Architecture& arch);

/// Overflow-safe softmax (max subtraction).
std::vector<double> softmax(std::span<const double> logits);
void softmax_into(std::span<const double> logits, std::span<double> probs);

/// -log(probs[label] + 1e-12), clamped at 0. Throws if label is out of range.
double cross_entropy(std::span<const double> probs, int label);

/// Exact reverse-mode gradient of cross_entropy(softmax(forward_logits)), by
/// parameter. Throws on shape mismatch.
std::vector<double> grad_params(const ParameterVector& theta, std::span<const double> x,
                                int label, const Architecture& arch);

/// Same loss, gradient by input.
std::vector<double> grad_input(const ParameterVector& theta, std::span<const double> x,
                               int label, const Architecture& arch);

// -- hot-path entry points (no shape checks, caller-owned scratch) -----------

/// Forward pass into ws; logits at ws.logits().
void forward_into(const Architecture& arch, const ParameterVector& theta,
                  std::span<const double> x, Workspace& ws);

/// Loss plus accumulation of d loss / d theta into grad_accum (size P).
double loss_grad_params_into(const Architecture& arch, const ParameterVector& theta,
                             std::span<const double> x, int label, Workspace& ws,
                             std::span<double> grad_accum);

/// Loss plus d loss / d x written (not accumulated) into grad_x.
double loss_grad_input_into(const Architecture& arch, const ParameterVector& theta,
                            std::span<const double> x, int label, Workspace& ws,
                            std::span<double> grad_x);

// -- batch kernel -------------------------------------------------------------

/// Scratch owned by callers of batch_param_gradient; sized lazily.
class BatchGradWorkspace {
 public:
  std::vector<Workspace> per_thread;
  std::vector<double> slab; // one per-example gradient row per batch slot
  std::vector<double> losses;
};

/// Mean cross-entropy loss over batch_indices and the mean parameter
/// gradient, written to mean_grad_out. The parallel path computes
/// per-example gradients into slab rows and reduces them in index order, so
/// any thread count reproduces the serial bits.
double batch_param_gradient(const Architecture& arch, const ParameterVector& theta,
                            std::span<const double> inputs_flat, int input_dim,
                            std::span<const int> labels,
                            std::span<const std::int32_t> batch_indices,
                            std::span<double> mean_grad_out, BatchGradWorkspace& ws,
                            Exec exec);

} // namespace bnnlip
