/* Copyright 2026 The NodeLens Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

// Small helpers shared by the unit tests and the acceptance binary.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <unistd.h>

#include "nodelens/common.hpp"
#include "nodelens/model.hpp"
#include "nodelens/tokenizer.hpp"

namespace nodelens::testing {

using Index = Eigen::Index;

inline ModelConfig small_config(std::uint64_t seed = 0, std::size_t vocab = 11) {
  ModelConfig c;
  c.d_model = 8;
  c.m_ffn = 16;
  c.n_layers = 2;
  c.n_heads = 2;
  c.vocab_size = vocab;
  c.max_seq = 16;
  c.seed = seed;
  return c;
}

inline TokenSequence random_tokens(std::size_t n, std::size_t vocab, std::uint64_t seed) {
  Rng rng(seed);
  TokenSequence out(n);
  for (auto& t : out) t = static_cast<TokenId>(rng.below(vocab));
  return out;
}

/// Fills every parameter with uniform(-scale, scale) noise. Norm gains get
/// 1 + noise so that they stay away from zero.
inline void jitter(TinyModel& model, std::uint64_t seed, double scale = 0.5) {
  Rng rng(seed);
  for (auto& t : model.tensors()) {
    const bool gain = t.name.find("norm") != std::string::npos;
    for (double& x : t.data) {
      const double r = (2.0 * rng.uniform() - 1.0) * scale;
      x = gain ? 1.0 + r : r;
    }
  }
}

inline double max_abs_diff(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) return INFINITY;
  return (a - b).cwiseAbs().maxCoeff();
}

inline double rel_diff(double a, double b) {
  const double scale = std::max(std::abs(a), std::abs(b));
  return scale == 0.0 ? 0.0 : std::abs(a - b) / scale;
}

inline bool bitwise_equal(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) return false;
  return std::equal(a.data(), a.data() + a.size(), b.data());
}

/// Fresh empty directory under the system temp dir.
inline std::filesystem::path temp_dir(const std::string& tag) {
  namespace fs = std::filesystem;
  static std::uint64_t counter = 0;
  const fs::path p = fs::temp_directory_path() /
                     ("nodelens_" + tag + "_" + std::to_string(::getpid()) + "_" +
                      std::to_string(counter++));
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

inline std::string source_path(const std::string& relative) {
  return std::string(NODELENS_SOURCE_DIR) + "/" + relative;
}

}  // namespace nodelens::testing
