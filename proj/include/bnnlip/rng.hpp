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

#include <array>
#include <cstdint>
#include <span>
#include <vector>

namespace bnnlip {

/// Counter-based random stream (Philox-4x32-10, Salmon et al., SC 2011).
///
/// A stream is addressed by (seed, stream id). The Philox key is the 64-bit
/// seed; the 128-bit counter holds the stream id in its high half and a block
/// index in its low half. Draws are therefore a pure function of
/// (seed, stream, position): the same stream always replays the same
/// sequence, and distinct stream ids give statistically independent streams
/// without any shared state. Fork substreams instead of sharing one stream
/// across concurrent tasks.
///
/// Word order: each 128-bit block yields words w0..w3; 64-bit draws are
/// w0|w1<<32 then w2|w3<<32. Uniforms map a 64-bit draw x to
/// (x >> 11) * 2^-53 in [0,1).
///
/// Normal variates use a Box-Muller transform on consecutive 64-bit draws
/// (a, b):
///   u1 = ((a >> 11) + 1) * 2^-53   in (0,1]
///   u2 = (b >> 11) * 2^-53         in [0,1)
///   z0 = sqrt(-2 ln u1) * cos(2 pi u2),  z1 = ... sin(2 pi u2)
/// ln/cos/sin are evaluated by fixed polynomials (see rng.cpp) built from
/// exact IEEE-754 operations (+,*,fma,sqrt), so the mapping from counter
/// words to variates is reproducible bit for bit on any IEEE-754 platform.
/// The second variate of a pair is cached: a stream is one fixed sequence of
/// normals no matter how calls are batched.
class RngStream {
 public:
  explicit RngStream(std::uint64_t seed, std::uint64_t stream = 0);

  /// Derives an independent substream. Depends only on (seed, stream id,
  /// child index), not on how much the parent has drawn, so fork layouts can
  /// be assigned up front and consumed in any order.
  RngStream fork(std::uint64_t child) const;

  std::uint64_t next_u64();
  /// Uniform double in [0, 1).
  double next_uniform();
  /// Uniform double in [lo, hi).
  double next_uniform(double lo, double hi);
  /// Uniform integer in [0, n), n >= 1. Computed as next_u64() % n.
  std::uint64_t next_below(std::uint64_t n);
  double next_normal();
  /// Bulk normals; exactly the sequence next_normal() would produce.
  void fill_normal(std::span<double> out);

  std::uint64_t seed() const { return seed_; }
  std::uint64_t stream() const { return stream_; }

 private:
  void refill_block();

  std::uint64_t seed_ = 0;
  std::uint64_t stream_ = 0;
  std::uint64_t counter_ = 0;      // blocks consumed
  std::array<std::uint64_t, 2> block_{};
  int block_pos_ = 2;              // 2 = empty
  double cached_normal_ = 0.0;
  bool has_cached_normal_ = false;
};

/// n i.i.d. standard normal variates drawn from rng.
std::vector<double> draw_standard_normal(RngStream& rng, std::size_t n);

namespace detail {
/// One Philox-4x32-10 block; exposed for known-answer tests.
std::array<std::uint32_t, 4> philox4x32(const std::array<std::uint32_t, 4>& counter,
                                        const std::array<std::uint32_t, 2>& key);
/// Box-Muller pair from two 64-bit draws (the documented transform).
void normal_pair(std::uint64_t a, std::uint64_t b, double& z0, double& z1);
} // namespace detail

} // namespace bnnlip
