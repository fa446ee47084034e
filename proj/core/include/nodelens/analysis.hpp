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

#include <array>
#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include "nodelens/calib.hpp"
#include "nodelens/model.hpp"

namespace nodelens {

struct SupernodeSet {
  ChannelSets layers;  // sorted per layer
  double fraction = 0.01;

  std::vector<std::size_t> counts() const;
  std::size_t total() const;
};

/// ceil(fraction * m), at least 1 and at most m.
std::size_t supernode_count(std::size_t m, double fraction);

/// Indices of the `count` largest values; ties broken by ascending index.
/// Returned in rank order (largest first).
std::vector<std::size_t> top_indices(std::span<const double> values,
                                     std::size_t count);

/// Per layer, the ceil(fraction * m) channels with the largest LP.
SupernodeSet select_supernodes(const ChannelStats& stats, double fraction);

/// Share of the total held by the top ceil(fraction * n) values; nullopt when
/// the total is not positive.
std::optional<double> top_fraction_mass(std::span<const double> values,
                                        double fraction);

std::vector<std::optional<double>> top_rho_mass(const ChannelStats& stats,
                                                double fraction);

/// max / mean per layer; nullopt when the mean is not positive.
std::vector<std::optional<double>> max_mean_ratio(const ChannelStats& stats);

/// 100 log-spaced percentiles in (0.1, 100].
std::vector<double> default_percentile_grid();

struct CumulativeCurve {
  std::vector<double> percentiles;
  /// Per layer, mass fraction held by the top p% of channels. Fractional
  /// channel counts interpolate linearly within the boundary channel.
  std::vector<std::vector<double>> mass;
};

CumulativeCurve cumulative_curve(const ChannelStats& stats,
                                 std::span<const double> percentiles);

/// |a ∩ b| / |a ∪ b|, 1 when both are empty.
double jaccard(std::span<const std::size_t> a, std::span<const std::size_t> b);

enum class FactorMetric { kActPower = 0, kCurvature = 1, kFactorized = 2, kExactLp = 3 };

struct FactorMasses {
  /// Per layer, top-fraction self-mass under each metric (FactorMetric order).
  std::vector<std::array<std::optional<double>, 4>> per_layer;
  /// Median over layers of the per-layer values.
  std::array<std::optional<double>, 4> median;
  /// Pooled: sum over layers of top mass / sum over layers of total mass.
  std::array<std::optional<double>, 4> pooled;
};

FactorMasses factor_masses(const ChannelStats& stats, double fraction);

/// Spearman rank correlation (average ranks for ties).
Correlation spearman(std::span<const double> x, std::span<const double> y);

double median(std::vector<double> values);

enum class MechanismFactor { kActPower = 0, kWriteNorm = 1, kUpNorm = 2, kGateNorm = 3 };

struct MechanismControls {
  /// Per layer Spearman(log lp, log factor) in MechanismFactor order.
  std::vector<std::array<Correlation, 4>> per_layer;
  std::array<double, 4> median{};
  /// Set when zeros were replaced by the smallest positive value before logs.
  bool zeros_replaced = false;
};

MechanismControls mechanism_controls(const ChannelStats& stats,
                                     const TinyModel& model);

struct ConcentrationReport {
  std::vector<std::optional<double>> top_mass;
  std::vector<std::optional<double>> max_mean;
  CumulativeCurve curve;
  std::uint64_t fingerprint = 0;
  double fraction = 0.01;
};

ConcentrationReport concentration_report(const ChannelStats& stats,
                                         double fraction,
                                         std::span<const double> percentiles);

}  // namespace nodelens
