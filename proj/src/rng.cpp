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

#include "bnnlip/rng.hpp"

#include <algorithm>
#include <bit>
#include <cmath>

namespace bnnlip {
namespace {

constexpr std::uint32_t kPhiloxM0 = 0xD2511F53u;
constexpr std::uint32_t kPhiloxM1 = 0xCD9E8D57u;
constexpr std::uint32_t kPhiloxW0 = 0x9E3779B9u;
constexpr std::uint32_t kPhiloxW1 = 0xBB67AE85u;

inline std::uint64_t mix64(std::uint64_t z) {
  z ^= z >> 30;
  z *= 0xBF58476D1CE4E5B9ull;
  z ^= z >> 27;
  z *= 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

[[gnu::always_inline]] inline void philox_round(std::uint32_t& x0, std::uint32_t& x1, std::uint32_t& x2,
                         std::uint32_t& x3, std::uint32_t k0, std::uint32_t k1) {
  const std::uint64_t p0 = static_cast<std::uint64_t>(kPhiloxM0) * x0;
  const std::uint64_t p1 = static_cast<std::uint64_t>(kPhiloxM1) * x2;
  const std::uint32_t y0 = static_cast<std::uint32_t>(p1 >> 32) ^ x1 ^ k0;
  const std::uint32_t y2 = static_cast<std::uint32_t>(p0 >> 32) ^ x3 ^ k1;
  x1 = static_cast<std::uint32_t>(p1);
  x3 = static_cast<std::uint32_t>(p0);
  x0 = y0;
  x2 = y2;
}

// One 128-bit block as two 64-bit words; branch-free so per-block loops
// vectorize across lanes.
[[gnu::always_inline]] inline void philox_block(std::uint64_t block_index, std::uint64_t stream, std::uint64_t seed,
                         std::uint64_t& w01, std::uint64_t& w23) {
  std::uint32_t x0 = static_cast<std::uint32_t>(block_index);
  std::uint32_t x1 = static_cast<std::uint32_t>(block_index >> 32);
  std::uint32_t x2 = static_cast<std::uint32_t>(stream);
  std::uint32_t x3 = static_cast<std::uint32_t>(stream >> 32);
  std::uint32_t k0 = static_cast<std::uint32_t>(seed);
  std::uint32_t k1 = static_cast<std::uint32_t>(seed >> 32);
  philox_round(x0, x1, x2, x3, k0, k1);
  philox_round(x0, x1, x2, x3, k0 + kPhiloxW0, k1 + kPhiloxW1);
  philox_round(x0, x1, x2, x3, k0 + 2 * kPhiloxW0, k1 + 2 * kPhiloxW1);
  philox_round(x0, x1, x2, x3, k0 + 3 * kPhiloxW0, k1 + 3 * kPhiloxW1);
  philox_round(x0, x1, x2, x3, k0 + 4 * kPhiloxW0, k1 + 4 * kPhiloxW1);
  philox_round(x0, x1, x2, x3, k0 + 5 * kPhiloxW0, k1 + 5 * kPhiloxW1);
  philox_round(x0, x1, x2, x3, k0 + 6 * kPhiloxW0, k1 + 6 * kPhiloxW1);
  philox_round(x0, x1, x2, x3, k0 + 7 * kPhiloxW0, k1 + 7 * kPhiloxW1);
  philox_round(x0, x1, x2, x3, k0 + 8 * kPhiloxW0, k1 + 8 * kPhiloxW1);
  philox_round(x0, x1, x2, x3, k0 + 9 * kPhiloxW0, k1 + 9 * kPhiloxW1);
  w01 = static_cast<std::uint64_t>(x0) | (static_cast<std::uint64_t>(x1) << 32);
  w23 = static_cast<std::uint64_t>(x2) | (static_cast<std::uint64_t>(x3) << 32);
}

// Exact bitwise select: mask all-ones picks x, zero picks y.
[[gnu::always_inline]] inline double fsel(std::uint64_t mask, double x, double y) {
  return std::bit_cast<double>((std::bit_cast<std::uint64_t>(x) & mask) |
                               (std::bit_cast<std::uint64_t>(y) & ~mask));
}

// ln(u) for positive normal u, from exact IEEE operations only: mantissa
// split by bit manipulation, atanh series with rational coefficients, fma
// accumulation. Max error a few 1e-14 absolute over (2^-53, 1]; branch-free
// so pair loops vectorize.
[[gnu::always_inline]] inline double log_portable(double u) {
  const std::uint64_t bits = std::bit_cast<std::uint64_t>(u);
  const double e_raw =
      static_cast<double>(static_cast<std::int64_t>((bits >> 52) & 0x7FF)) - 1023.0;
  const double m_raw =
      std::bit_cast<double>((bits & 0x000FFFFFFFFFFFFFull) | 0x3FF0000000000000ull);
  // keep m in [sqrt(1/2), sqrt(2))
  const std::uint64_t fold =
      0ull - static_cast<std::uint64_t>(m_raw > 1.4142135623730951);
  const double m = fsel(fold, 0.5 * m_raw, m_raw);
  const double e = fsel(fold, e_raw + 1.0, e_raw);
  const double s = (m - 1.0) / (m + 1.0);
  const double s2 = s * s;
  double p = 1.0 / 15.0;
  p = std::fma(p, s2, 1.0 / 13.0);
  p = std::fma(p, s2, 1.0 / 11.0);
  p = std::fma(p, s2, 1.0 / 9.0);
  p = std::fma(p, s2, 1.0 / 7.0);
  p = std::fma(p, s2, 1.0 / 5.0);
  p = std::fma(p, s2, 1.0 / 3.0);
  p = std::fma(p, s2, 1.0);
  const double ln_m = 2.0 * s * p;
  return std::fma(e, 0.6931471805599453, ln_m);
}

// sin and cos of theta in [0, 2*pi + eps): Cody-Waite quadrant reduction and
// truncated Taylor polynomials with exact factorial coefficients.
[[gnu::always_inline]] inline void sincos_portable(double theta, double& sin_out, double& cos_out) {
  constexpr double kTwoOverPi = 0.63661977236758138;
  constexpr double kPio2Hi = 1.57079632679233551025390625;   // 38 high bits of pi/2
  constexpr double kPio2Lo = 2.56334415158395578912e-12;     // pi/2 - kPio2Hi
  const double qd = std::floor(std::fma(theta, kTwoOverPi, 0.5));
  double t = theta - qd * kPio2Hi;
  t = t - qd * kPio2Lo;
  const double t2 = t * t;

  double ps = 1.0 / 6227020800.0;            // 1/13!
  ps = std::fma(ps, t2, -1.0 / 39916800.0);  // 1/11!
  ps = std::fma(ps, t2, 1.0 / 362880.0);     // 1/9!
  ps = std::fma(ps, t2, -1.0 / 5040.0);      // 1/7!
  ps = std::fma(ps, t2, 1.0 / 120.0);        // 1/5!
  ps = std::fma(ps, t2, -1.0 / 6.0);         // 1/3!
  ps = std::fma(ps, t2, 1.0);
  const double st = t * ps;

  double pc = -1.0 / 87178291200.0;          // 1/14!
  pc = std::fma(pc, t2, 1.0 / 479001600.0);  // 1/12!
  pc = std::fma(pc, t2, -1.0 / 3628800.0);   // 1/10!
  pc = std::fma(pc, t2, 1.0 / 40320.0);      // 1/8!
  pc = std::fma(pc, t2, -1.0 / 720.0);       // 1/6!
  pc = std::fma(pc, t2, 1.0 / 24.0);         // 1/4!
  pc = std::fma(pc, t2, -0.5);
  pc = std::fma(pc, t2, 1.0);
  const double ct = pc;

  // quadrant decode, branch-free: swap polys if q odd, flip signs by bit XOR
  const std::uint64_t q = static_cast<std::uint64_t>(qd); // 0..4
  const std::uint64_t swap_mask = 0ull - (q & 1);
  const std::uint64_t sin_neg = ((q >> 1) & 1) << 63;
  const std::uint64_t cos_neg = (((q + 1) >> 1) & 1) << 63;
  sin_out = std::bit_cast<double>(std::bit_cast<std::uint64_t>(fsel(swap_mask, ct, st)) ^ sin_neg);
  cos_out = std::bit_cast<double>(std::bit_cast<std::uint64_t>(fsel(swap_mask, st, ct)) ^ cos_neg);
}

[[gnu::always_inline]] inline void bm_transform(std::uint64_t a, std::uint64_t b, double& z0, double& z1) {
  const double u1 = static_cast<double>((a >> 11) + 1) * 0x1.0p-53;
  const double u2 = static_cast<double>(b >> 11) * 0x1.0p-53;
  const double r = std::sqrt(-2.0 * log_portable(u1));
  double s, c;
  sincos_portable(6.283185307179586 * u2, s, c);
  z0 = r * c;
  z1 = r * s;
}

} // namespace

namespace detail {

std::array<std::uint32_t, 4> philox4x32(const std::array<std::uint32_t, 4>& counter,
                                        const std::array<std::uint32_t, 2>& key) {
  const std::uint64_t blk =
      static_cast<std::uint64_t>(counter[0]) | (static_cast<std::uint64_t>(counter[1]) << 32);
  const std::uint64_t stream =
      static_cast<std::uint64_t>(counter[2]) | (static_cast<std::uint64_t>(counter[3]) << 32);
  const std::uint64_t seed =
      static_cast<std::uint64_t>(key[0]) | (static_cast<std::uint64_t>(key[1]) << 32);
  std::uint64_t w01, w23;
  philox_block(blk, stream, seed, w01, w23);
  return {static_cast<std::uint32_t>(w01), static_cast<std::uint32_t>(w01 >> 32),
          static_cast<std::uint32_t>(w23), static_cast<std::uint32_t>(w23 >> 32)};
}

void normal_pair(std::uint64_t a, std::uint64_t b, double& z0, double& z1) {
  bm_transform(a, b, z0, z1);
}

} // namespace detail

RngStream::RngStream(std::uint64_t seed, std::uint64_t stream)
    : seed_(seed), stream_(stream) {}

RngStream RngStream::fork(std::uint64_t child) const {
  return RngStream(seed_, mix64(mix64(stream_) ^ (child + 0x9E3779B97F4A7C15ull)));
}

void RngStream::refill_block() {
  philox_block(counter_, stream_, seed_, block_[0], block_[1]);
  block_pos_ = 0;
  ++counter_;
}

std::uint64_t RngStream::next_u64() {
  if (block_pos_ == 2) refill_block();
  return block_[block_pos_++];
}

double RngStream::next_uniform() {
  return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double RngStream::next_uniform(double lo, double hi) {
  return lo + (hi - lo) * next_uniform();
}

std::uint64_t RngStream::next_below(std::uint64_t n) {
  return next_u64() % n;
}

double RngStream::next_normal() {
  if (has_cached_normal_) {
    has_cached_normal_ = false;
    return cached_normal_;
  }
  const std::uint64_t a = next_u64();
  const std::uint64_t b = next_u64();
  double z0, z1;
  bm_transform(a, b, z0, z1);
  cached_normal_ = z1;
  has_cached_normal_ = true;
  return z0;
}

void RngStream::fill_normal(std::span<double> out) {
  const std::size_t n = out.size();
  std::size_t i = 0;
  if (i < n && has_cached_normal_) {
    out[i++] = cached_normal_;
    has_cached_normal_ = false;
  }
  constexpr std::size_t kChunkPairs = 1024;
  std::uint64_t ua[kChunkPairs], ub[kChunkPairs];
  double za[kChunkPairs], zb[kChunkPairs];
  while (n - i >= 2) {
    const std::size_t pairs = std::min(kChunkPairs, (n - i) / 2);
    if (block_pos_ == 2) {
      // Block-aligned fast path: one block per pair, vectorizable.
      const std::uint64_t base = counter_;
      const std::uint64_t stream = stream_, seed = seed_;
      for (std::size_t p = 0; p < pairs; ++p) {
        philox_block(base + p, stream, seed, ua[p], ub[p]);
      }
      counter_ += pairs;
    } else {
      for (std::size_t p = 0; p < pairs; ++p) {
        ua[p] = next_u64();
        ub[p] = next_u64();
      }
    }
    for (std::size_t p = 0; p < pairs; ++p) {
      bm_transform(ua[p], ub[p], za[p], zb[p]);
    }
    double* dst = out.data() + i;
    for (std::size_t p = 0; p < pairs; ++p) {
      dst[2 * p] = za[p];
      dst[2 * p + 1] = zb[p];
    }
    i += 2 * pairs;
  }
  if (i < n) out[i] = next_normal();
}

std::vector<double> draw_standard_normal(RngStream& rng, std::size_t n) {
  std::vector<double> out(n);
  rng.fill_normal(out);
  return out;
}

} // namespace bnnlip
