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

#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "nodelens/analysis.hpp"
#include "nodelens/calib.hpp"
#include "nodelens/halo.hpp"

namespace nodelens {

/// Correlations are clamped to this value before the log.
inline constexpr double kMaxCorrelation = 1.0 - 1e-9;

/// -1/2 ln(1 - max(rho, 0)^2). Rejects |rho| > 1 + 1e-9.
double red_score(double rho);

/// Mean of the k largest entries (all entries when fewer than k).
double top_k_mean(std::span<const double> values, std::size_t k);

/// Red->M for channel j of `layer`: top-k mean of Red(j, s) over the core.
double directed_redundancy(const QCross& qcross, std::size_t layer,
                           std::size_t j, std::size_t k);

/// Ascending ordinal rank of each value, ties broken by channel index, scaled
/// to [0, 1] (a single element gets 0).
std::vector<double> redundancy_ranks(std::span<const double> values,
                                     std::span<const std::size_t> channels);

/// alpha + (1 - alpha)(1 - r^gamma).
double protect_from_rank(double rank, double alpha, double gamma);

/// Protect over all m channels: halo channels from their redundancy rank,
/// everything else 1.
std::vector<double> protect_scores(std::size_t m,
                                   std::span<const std::size_t> halo,
                                   std::span<const double> halo_redundancy,
                                   double alpha, double gamma);

struct RedundancyOptions {
  std::size_t k = 5;
  double alpha = 0.2;
  double gamma = 8.0;
};

struct RedundancyLayer {
  std::vector<std::size_t> halo;          // sorted
  std::vector<double> halo_redundancy;    // Red->M, aligned with `halo`
  std::vector<double> halo_rank;          // r_j, aligned with `halo`
  std::vector<double> protect;            // [m]
  /// Red->M for every non-core channel (0 for core channels); used by the
  /// halo versus non-halo comparison.
  std::vector<double> redundancy_all;
};

struct RedundancyTable {
  std::vector<RedundancyLayer> layers;
  RedundancyOptions options;
};

RedundancyTable build_redundancy_table(const QCross& qcross,
                                       const SupernodeSet& supernodes,
                                       const HaloSet& halos,
                                       const RedundancyOptions& options = {});

}  // namespace nodelens
