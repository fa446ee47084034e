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

// Perplexity protocol and ablation experiments.
//
// A corpus is cut into contiguous blocks of block_len inputs; each block
// carries one extra token so every input position has a next-token target.
// Consecutive blocks share that boundary token, so input positions never
// overlap. A trailing partial block is dropped.

#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "nodelens/analysis.hpp"
#include "nodelens/calib.hpp"
#include "nodelens/halo.hpp"
#include "nodelens/model.hpp"
#include "nodelens/train.hpp"

namespace nodelens {

inline constexpr std::size_t kDefaultBlockLength = 128;
inline constexpr std::size_t kAblationSliceTokens = 8192;

struct EvalSet {
  std::vector<TokenSequence> blocks;  // each block_len + 1 tokens
  std::size_t block_len = 0;

  std::size_t tokens() const { return blocks.size() * block_len; }
};

/// Splits `corpus` into blocks. max_tokens > 0 keeps only the leading blocks
/// whose inputs fit in that many tokens (at least one block).
EvalSet make_eval_set(const TokenSequence& corpus, std::size_t block_len,
                      std::size_t max_tokens = 0);

struct NllSummary {
  double mean_nll = 0.0;    // nats/token, token weighted
  double perplexity = 0.0;  // exp(mean_nll)
  std::size_t tokens = 0;
};

using LogitsFn = std::function<Matrix(std::span<const TokenId>)>;

/// Token-weighted NLL of `logits_fn` over every block. Blocks are evaluated
/// in parallel and summed in block order.
NllSummary evaluate(const EvalSet& set, const LogitsFn& logits_fn);

NllSummary model_perplexity(const TinyModel& model, const EvalSet& set);
NllSummary masked_perplexity(const TinyModel& model, const ChannelSets& mask,
                             const EvalSet& set);
NllSummary blockwise_perplexity(const TinyModel& model,
                                const TokenSequence& corpus,
                                std::size_t block_len);

/// NLL(masked) - NLL(clean) for each channel set.
std::vector<double> ablation_delta(const TinyModel& model, const EvalSet& set,
                                   const std::vector<ChannelSets>& channel_sets);

/// Per layer, per channel ΔNLL of zeroing that single channel. The clean
/// residual stream is reused, so only the layers above the channel rerun.
std::vector<std::vector<double>> single_channel_deltas(const TinyModel& model,
                                                       const EvalSet& set);

struct LpValidation {
  std::vector<double> bin_mean;  // ascending LP percentile
  std::vector<std::size_t> bin_count;
  Correlation spearman;  // bin index vs mean ΔNLL
  std::vector<std::vector<double>> channel_delta;
  /// Median max/mean LP ratio below 2: the LP signal may be too flat for the
  /// binning to mean much (typical of untrained models).
  bool weak_signal = false;
};

/// Channels are binned by LP percentile within their layer; bins are pooled
/// across layers.
LpValidation lp_validation_bins(const TinyModel& model, const ChannelStats& stats,
                                const EvalSet& set, std::size_t n_bins = 10);

/// Same as above from precomputed single-channel deltas.
LpValidation lp_validation_from_deltas(const ChannelStats& stats,
                                       std::vector<std::vector<double>> deltas,
                                       std::size_t n_bins);

struct SweepPoint {
  double x = 0.0;
  double mean = 0.0;
  double stddev = 0.0;  // sample standard deviation
  std::vector<double> values;
  std::vector<std::uint64_t> seeds;
  std::vector<double> hit_rates;
  std::size_t pruned = 0;
};

struct SweepCurve {
  std::vector<SweepPoint> points;
  double sparsity = 0.0;
  std::size_t trials = 0;
  Correlation spearman;  // x vs mean
};

/// Random masks at fixed sparsity with a forced supernode hit fraction. Trial
/// t of every fraction uses the same seed, derived from `seed` and t.
SweepCurve dose_response(const TinyModel& model, const SupernodeSet& supernodes,
                         const EvalSet& set, double sparsity,
                         std::span<const double> hit_fractions,
                         std::size_t trials, std::span<const double> caps,
                         std::uint64_t seed);

/// `count` random channels per layer avoiding `exclude` (per-layer counts
/// are clamped to the available pool).
ChannelSets random_channels(const std::vector<std::size_t>& widths,
                            const std::vector<std::size_t>& count,
                            const ChannelSets& exclude, std::uint64_t seed);

struct ArmResult {
  std::vector<double> delta;  // one per trial
  std::vector<std::uint64_t> seeds;
  double mean = 0.0;
};

struct HaloAblation {
  ArmResult halo;     // random halo subset, supernodes kept
  ArmResult matched;  // LP-decile matched non-halo channels
  ArmResult core;     // supernode ablation reference
  std::size_t per_layer = 0;
  /// Matches that fell back to the nearest decile with candidates.
  std::size_t fallback_matches = 0;
  /// (layer, halo channel, matched channel, halo decile, matched decile).
  struct Pair {
    std::size_t layer, halo_channel, matched_channel, halo_decile, matched_decile;
  };
  std::vector<Pair> pairs;  // from the last trial
};

/// Ablates `per_layer` channels in every layer with a write halo.
HaloAblation conditional_halo_ablation(const TinyModel& model,
                                       const SupernodeSet& supernodes,
                                       const HaloSet& halos,
                                       const ChannelStats& stats,
                                       const EvalSet& set, std::size_t per_layer,
                                       std::size_t trials, std::uint64_t seed);

struct CriticalityResult {
  ArmResult core;    // same value each trial
  ArmResult random;  // same-count random non-supernode channels
  std::size_t wins = 0;  // trials with core > random
};

CriticalityResult supernode_criticality(const TinyModel& model,
                                        const SupernodeSet& supernodes,
                                        const EvalSet& set, std::size_t trials,
                                        std::uint64_t seed);

/// Mean replacement of supernodes against same-count random non-supernode
/// channels. Channel means come from stats.act_mean.
CriticalityResult mean_replacement_experiment(const TinyModel& model,
                                              const SupernodeSet& supernodes,
                                              const ChannelStats& stats,
                                              const EvalSet& set,
                                              std::size_t trials,
                                              std::uint64_t seed);

struct EmergencePoint {
  std::size_t step = 0;
  double median_top_mass = 0.0;
  double median_max_mean = 0.0;
  std::vector<double> jaccard;  // per layer, against the final checkpoint
  double median_jaccard = 0.0;
};

/// Calibrates every checkpoint on `windows` and tracks concentration. The
/// last checkpoint is the reference.
std::vector<EmergencePoint> emergence_track(const std::vector<Checkpoint>& checkpoints,
                                            const std::vector<TokenSequence>& windows,
                                            double fraction);

}  // namespace nodelens
