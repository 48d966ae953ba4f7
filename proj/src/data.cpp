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

#include "bnnlip/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>

#include "bnnlip/rng.hpp"

namespace bnnlip {
namespace {

constexpr std::uint32_t kImagesMagic = 0x00000803u;
constexpr std::uint32_t kLabelsMagic = 0x00000801u;
constexpr std::uint64_t kSubsetStream = 0x5b5e75;
constexpr std::uint64_t kBlobsStream = 0xb70b5;

std::vector<unsigned char> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IdxError(IdxError::Kind::io, "cannot open " + path);
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                   std::istreambuf_iterator<char>());
  return bytes;
}

std::uint32_t be32(const unsigned char* p) {
  return (static_cast<std::uint32_t>(p[0]) << 24) | (static_cast<std::uint32_t>(p[1]) << 16) |
         (static_cast<std::uint32_t>(p[2]) << 8) | static_cast<std::uint32_t>(p[3]);
}

void put_be32(std::ofstream& out, std::uint32_t v) {
  const unsigned char b[4] = {static_cast<unsigned char>(v >> 24),
                              static_cast<unsigned char>(v >> 16),
                              static_cast<unsigned char>(v >> 8), static_cast<unsigned char>(v)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

} // namespace

void Dataset::validate() const {
  if (inputs.size() != static_cast<std::size_t>(size()) * dim) {
    throw std::invalid_argument("dataset " + name + ": input/label sizes disagree");
  }
  for (double v : inputs) {
    if (!(v >= 0.0 && v <= 1.0)) {
      throw std::invalid_argument("dataset " + name + ": input coordinate outside [0,1]");
    }
  }
  for (int y : labels) {
    if (y < 0 || y >= num_classes) {
      throw std::invalid_argument("dataset " + name + ": label outside [0, num_classes)");
    }
  }
}

Dataset load_idx(const std::string& images_path, const std::string& labels_path) {
  const auto img = read_file(images_path);
  if (img.size() < 16) throw IdxError(IdxError::Kind::truncated, images_path + ": header truncated");
  if (be32(img.data()) != kImagesMagic) {
    char msg[128];
    std::snprintf(msg, sizeof msg, "%s: bad magic 0x%08x, expected 0x%08x", images_path.c_str(),
                  be32(img.data()), kImagesMagic);
    throw IdxError(IdxError::Kind::magic, msg);
  }
  const std::uint32_t n = be32(img.data() + 4);
  const std::uint32_t rows = be32(img.data() + 8);
  const std::uint32_t cols = be32(img.data() + 12);
  const std::size_t want = 16 + static_cast<std::size_t>(n) * rows * cols;
  if (img.size() < want) {
    throw IdxError(IdxError::Kind::truncated,
                   images_path + ": expected " + std::to_string(want) + " bytes, got " +
                       std::to_string(img.size()));
  }

  const auto lab = read_file(labels_path);
  if (lab.size() < 8) throw IdxError(IdxError::Kind::truncated, labels_path + ": header truncated");
  if (be32(lab.data()) != kLabelsMagic) {
    throw IdxError(IdxError::Kind::magic, labels_path + ": bad label magic");
  }
  const std::uint32_t nl = be32(lab.data() + 4);
  if (lab.size() < 8 + static_cast<std::size_t>(nl)) {
    throw IdxError(IdxError::Kind::truncated, labels_path + ": label data truncated");
  }
  if (n != nl) {
    throw IdxError(IdxError::Kind::count_mismatch,
                   images_path + " holds " + std::to_string(n) + " images but " + labels_path +
                       " holds " + std::to_string(nl) + " labels");
  }

  Dataset ds;
  ds.dim = static_cast<int>(rows * cols);
  ds.inputs.resize(static_cast<std::size_t>(n) * ds.dim);
  ds.labels.resize(n);
  for (std::size_t i = 0; i < ds.inputs.size(); ++i) {
    ds.inputs[i] = static_cast<double>(img[16 + i]) / 255.0;
  }
  int max_label = 0;
  for (std::uint32_t i = 0; i < n; ++i) {
    ds.labels[i] = static_cast<int>(lab[8 + i]);
    max_label = std::max(max_label, ds.labels[i]);
  }
  ds.num_classes = max_label + 1;
  ds.validate();
  return ds;
}

void save_idx(const Dataset& ds, const std::string& images_path, const std::string& labels_path) {
  std::ofstream img(images_path, std::ios::binary);
  if (!img) throw IdxError(IdxError::Kind::io, "cannot write " + images_path);
  put_be32(img, kImagesMagic);
  put_be32(img, static_cast<std::uint32_t>(ds.size()));
  put_be32(img, 1);
  put_be32(img, static_cast<std::uint32_t>(ds.dim));
  for (double v : ds.inputs) {
    const long q = std::lround(v * 255.0);
    img.put(static_cast<char>(std::clamp(q, 0L, 255L)));
  }

  std::ofstream lab(labels_path, std::ios::binary);
  if (!lab) throw IdxError(IdxError::Kind::io, "cannot write " + labels_path);
  put_be32(lab, kLabelsMagic);
  put_be32(lab, static_cast<std::uint32_t>(ds.size()));
  for (int y : ds.labels) lab.put(static_cast<char>(y));
}

Dataset subset(const Dataset& ds, int n, std::uint64_t seed) {
  if (n > ds.size()) {
    throw std::invalid_argument("subset of " + std::to_string(n) + " from dataset of " +
                                std::to_string(ds.size()));
  }
  std::vector<int> order(ds.size());
  std::iota(order.begin(), order.end(), 0);
  RngStream rng(seed, kSubsetStream);
  for (int i = ds.size() - 1; i > 0; --i) {
    const int j = static_cast<int>(rng.next_below(static_cast<std::uint64_t>(i) + 1));
    std::swap(order[i], order[j]);
  }

  Dataset out;
  out.name = ds.name;
  out.dim = ds.dim;
  out.num_classes = ds.num_classes;
  out.inputs.resize(static_cast<std::size_t>(n) * ds.dim);
  out.labels.resize(n);
  for (int k = 0; k < n; ++k) {
    const auto row = ds.input(order[k]);
    std::copy(row.begin(), row.end(), out.inputs.begin() + static_cast<std::size_t>(k) * ds.dim);
    out.labels[k] = ds.labels[order[k]];
  }
  return out;
}

Dataset synthetic_blobs(int n, int dim, int num_classes, double spread, std::uint64_t seed) {
  if (num_classes < 1 || n < num_classes) {
    throw std::invalid_argument("blobs need n >= num_classes >= 1");
  }
  RngStream root(seed, kBlobsStream);

  // class centers in [0.2, 0.8]^dim, greedily kept apart
  RngStream center_rng = root.fork(0);
  std::vector<std::vector<double>> centers;
  const double min_dist = 0.3 / std::sqrt(static_cast<double>(std::max(1, num_classes - 1)));
  for (int c = 0; c < num_classes; ++c) {
    std::vector<double> best(dim, 0.0);
    double best_sep = -1.0;
    for (int attempt = 0; attempt < 64; ++attempt) {
      std::vector<double> cand(dim);
      for (double& v : cand) v = center_rng.next_uniform(0.2, 0.8);
      double sep = 1e300;
      for (const auto& prev : centers) {
        double d2 = 0.0;
        for (int k = 0; k < dim; ++k) d2 += (cand[k] - prev[k]) * (cand[k] - prev[k]);
        sep = std::min(sep, std::sqrt(d2));
      }
      if (sep > best_sep) {
        best_sep = sep;
        best = std::move(cand);
      }
      if (best_sep >= min_dist) break;
    }
    centers.push_back(std::move(best));
  }

  RngStream point_rng = root.fork(1);
  Dataset ds;
  ds.name = "blobs";
  ds.dim = dim;
  ds.num_classes = num_classes;
  ds.inputs.resize(static_cast<std::size_t>(n) * dim);
  ds.labels.resize(n);
  std::vector<double> noise(dim);
  for (int i = 0; i < n; ++i) {
    const int label = i % num_classes;
    ds.labels[i] = label;
    point_rng.fill_normal(noise);
    for (int k = 0; k < dim; ++k) {
      ds.inputs[static_cast<std::size_t>(i) * dim + k] =
          std::clamp(centers[label][k] + spread * noise[k], 0.0, 1.0);
    }
  }
  ds.validate();
  return ds;
}

} // namespace bnnlip
