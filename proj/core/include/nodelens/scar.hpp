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

// Supernode-constrained structured FFN channel pruning.
//
// Channels are scored per layer, supernodes are removed from the candidate
// pool, and one global ascending-score pass fills the budget
// floor(s * sum_l m_l) while respecting per-layer caps. Lower scores are
// pruned first.

#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "nodelens/analysis.hpp"
#include "nodelens/calib.hpp"
#include "nodelens/model.hpp"

namespace nodelens {

using LayerScores = std::vector<std::vector<double>>;

enum class ScarVariant { kLp, kProt, kConn };
enum class BaselineMethod { kMagnitude, kWanda, kActL2, kRandom };

std::string_view to_string(ScarVariant variant);
std::string_view to_string(BaselineMethod method);
ScarVariant parse_variant(std::string_view name);
BaselineMethod parse_baseline(std::string_view name);

inline constexpr double kDefaultLayerCap = 0.70;

struct PruneMask {
  ChannelSets pruned;  // sorted per layer
  std::vector<std::size_t> widths;
  std::string method;
  /// How per-weight saliencies were combined into a channel score.
  std::string aggregation;
  double sparsity = 0.0;
  std::vector<double> caps;  // per layer
  std::uint64_t seed = 0;
  std::optional<double> hit_rate;
  std::uint64_t fingerprint = 0;
  bool fingerprint_missing = false;
  /// Supernode set the hit-rate was measured against, when recorded.
  std::optional<ChannelSets> supernode_reference;

  std::size_t total_pruned() const;
};

/// LP: lp. Prot: lp * Protect. Conn: lp * ((1 - Conn) + Conn * Protect).
LayerScores scar_scores(ScarVariant variant, const ChannelStats& stats,
                        const LayerScores* protect, const LayerScores* conn);

/// magnitude: L2 norm over the channel's (W_up row, W_gate row, W_down
/// column). wanda: sum |w| * rms(input) over the same group, with the FFN
/// input RMS for the read rows and rms(u_i) for the write column. act_l2:
/// sqrt(E[u_i^2]). random: uniform draws from `seed`.
LayerScores baseline_scores(BaselineMethod method, const TinyModel& model,
                            const ChannelStats* stats, std::uint64_t seed);

/// Largest pruned count allowed by a cap in a layer of width m.
std::size_t cap_limit(std::size_t m, double cap);

/// floor(s * total).
std::size_t prune_budget(std::size_t total_channels, double sparsity);

/// Global ascending greedy over non-protected channels, ties by (layer,
/// channel). `caps` holds one value per layer or a single broadcast value.
/// Throws Error(kInfeasible) when the budget cannot be met.
PruneMask select_mask(const LayerScores& scores, const ChannelSets& protected_set,
                      double sparsity, std::span<const double> caps);

/// Fixed-budget random mask with exactly round(f * |M|) supernodes. Draws
/// come from two seeded permutations (supernodes, non-supernodes), so masks
/// for different f under one seed share their random order.
PruneMask forced_hit_mask(const SupernodeSet& supernodes,
                          const std::vector<std::size_t>& widths,
                          double hit_fraction, double sparsity,
                          std::span<const double> caps, std::uint64_t seed);

/// Uniform random protected set with the same per-layer counts as `like`.
ChannelSets random_protected_set(const std::vector<std::size_t>& widths,
                                 const SupernodeSet& like, std::uint64_t seed);

/// |pruned ∩ M| / |M|. Throws when M is empty.
double hit_rate(const ChannelSets& pruned, const SupernodeSet& supernodes);

}  // namespace nodelens
