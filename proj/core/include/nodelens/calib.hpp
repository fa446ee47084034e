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

// Streaming per-channel calibration statistics.
//
// Pass 1 accumulates, per FFN channel i and over every calibration token,
//   lp_i         = 1/2 E[(u_i s_i)^2]
//   act_power_i  = E[u_i^2]
//   curvature_i  = E[s_i^2]
// where s = W_down^T g_y is the projected loss gradient. Pass 2 (after the
// supernode core is known) accumulates the sufficient statistics needed to
// correlate q_j = u_j s_j against q of every core channel.
//
// Accumulators are single-writer. Parallel calibration accumulates disjoint
// shards and merges them in shard order.

#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <vector>

#include "nodelens/model.hpp"

namespace nodelens {

struct ChannelStats {
  std::vector<std::vector<double>> lp;         // per layer [m]
  std::vector<std::vector<double>> act_power;  // per layer [m]
  std::vector<std::vector<double>> curvature;  // per layer [m]
  /// Optional: E[u_i] per channel (channel means for mean replacement).
  std::vector<std::vector<double>> act_mean;
  /// Optional: E[h_c^2] per feature of the post-norm FFN input [d].
  std::vector<std::vector<double>> input_power;
  std::uint64_t token_count = 0;
  std::uint64_t fingerprint = 0;

  std::size_t n_layers() const { return lp.size(); }
  std::vector<std::size_t> widths() const;
  /// Throws Error(kInvalidArgument) if shapes disagree or a value is negative
  /// or non-finite.
  void validate() const;
};

class StatsAccumulator {
 public:
  /// Empty accumulator with no shape; the identity element of merge().
  StatsAccumulator() = default;
  StatsAccumulator(std::vector<std::size_t> widths, std::size_t d_model,
                   std::uint64_t model_fingerprint);
  static StatsAccumulator for_model(const TinyModel& model);

  void accumulate(const ChannelTrace& trace);
  /// Adds `other` into this accumulator. Both must share shapes and
  /// fingerprint unless one of them is empty.
  void merge(const StatsAccumulator& other);
  /// Divides sums by the token count. Throws on zero tokens.
  ChannelStats finalize() const;

  std::uint64_t token_count() const { return token_count_; }
  bool shaped() const { return !widths_.empty(); }
  /// Raw running sums of (u s)^2 / 2, u^2 and s^2.
  const std::vector<std::vector<double>>& lp_sums() const { return lp_sum_; }
  const std::vector<std::vector<double>>& act_power_sums() const { return u2_sum_; }
  const std::vector<std::vector<double>>& curvature_sums() const { return s2_sum_; }

 private:
  std::vector<std::size_t> widths_;
  std::size_t d_model_ = 0;
  std::uint64_t fingerprint_ = 0;
  std::uint64_t token_count_ = 0;
  std::vector<std::vector<double>> lp_sum_, u2_sum_, s2_sum_, u_sum_;
  std::vector<std::vector<double>> h2_sum_;
};

StatsAccumulator merge(const StatsAccumulator& a, const StatsAccumulator& b);

/// `count` random windows of `length + 1` tokens (inputs plus shifted
/// targets) drawn with the given seed.
std::vector<TokenSequence> calibration_windows(const TokenSequence& corpus,
                                               std::size_t count,
                                               std::size_t length,
                                               std::uint64_t seed);

/// Runs forward + backward on every window and accumulates pass-1 stats.
/// Sequences are split into worker_count() contiguous shards merged in order.
StatsAccumulator calibrate(const TinyModel& model,
                           const std::vector<TokenSequence>& windows);

/// Finalized pass-2 statistics: moments of q_j and cross moments with each
/// core channel of the layer.
struct QCrossLayer {
  std::vector<std::size_t> core;  // sorted core channel indices
  std::vector<double> mean_q;     // [m]
  std::vector<double> mean_q2;    // [m]
  Matrix mean_cross;              // [m x |core|], E[q_j q_core]
  /// Raw q series of the core channels, present only when requested.
  std::vector<std::vector<double>> core_series;
};

struct QCross {
  std::vector<QCrossLayer> layers;
  std::uint64_t token_count = 0;
  std::uint64_t fingerprint = 0;
};

class QCrossAccumulator {
 public:
  QCrossAccumulator() = default;
  QCrossAccumulator(std::vector<std::size_t> widths, ChannelSets core,
                    std::uint64_t model_fingerprint,
                    bool keep_core_series = false);

  void accumulate(const ChannelTrace& trace);
  void merge(const QCrossAccumulator& other);
  QCross finalize() const;

  std::uint64_t token_count() const { return token_count_; }

 private:
  std::vector<std::size_t> widths_;
  ChannelSets core_;
  std::uint64_t fingerprint_ = 0;
  bool keep_series_ = false;
  std::uint64_t token_count_ = 0;
  std::vector<std::vector<double>> q_sum_, q2_sum_;
  std::vector<Matrix> cross_sum_;
  std::vector<std::vector<std::vector<double>>> series_;
};

QCrossAccumulator calibrate_qcross(const TinyModel& model,
                                   const std::vector<TokenSequence>& windows,
                                   const ChannelSets& core,
                                   bool keep_core_series = false);

struct Correlation {
  double value = 0.0;
  /// Set when either side has zero variance; value is then 0.
  bool degenerate = false;
};

/// Pearson correlation of q_j with q of `core_channel` (which must belong to
/// the layer's core set).
Correlation pearson(const QCross& qcross, std::size_t layer, std::size_t j,
                    std::size_t core_channel);

/// Pearson correlation from raw first and second moments.
Correlation pearson_from_moments(double mean_x, double mean_y, double mean_x2,
                                 double mean_y2, double mean_xy);

}  // namespace nodelens
