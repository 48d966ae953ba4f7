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

namespace bnnlip {

/// Immutable-after-construction classification dataset. Inputs are stored
/// row major with every coordinate in [0,1].
struct Dataset {
  std::string name;
  int dim = 0;
  int num_classes = 0;
  std::vector<double> inputs;
  std::vector<int> labels;

  int size() const { return static_cast<int>(labels.size()); }
  std::span<const double> input(int i) const {
    return {inputs.data() + static_cast<std::size_t>(i) * dim, static_cast<std::size_t>(dim)};
  }
  void validate() const;
};

class IdxError : public std::runtime_error {
 public:
  enum class Kind { io, magic, truncated, count_mismatch };
  IdxError(Kind kind, const std::string& message) : std::runtime_error(message), kind_(kind) {}
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

/// Decodes the big-endian IDX3/IDX1 pair (magic 0x00000803 / 0x00000801);
/// pixels are scaled by 1/255. Image and label counts must match.
Dataset load_idx(const std::string& images_path, const std::string& labels_path);

/// Writes the dataset back to an IDX3/IDX1 pair, quantizing coordinates to
/// bytes. Datasets whose coordinates came from bytes round-trip bit exactly.
void save_idx(const Dataset& ds, const std::string& images_path, const std::string& labels_path);

/// First n items after a seed-deterministic shuffle of ds.
Dataset subset(const Dataset& ds, int n, std::uint64_t seed);

/// Gaussian blobs around distinct class centers, clipped to [0,1]^dim, with
/// class counts differing by at most one.
Dataset synthetic_blobs(int n, int dim, int num_classes, double spread, std::uint64_t seed);

} // namespace bnnlip
