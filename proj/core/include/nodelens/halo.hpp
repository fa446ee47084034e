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

// Weight-space neighborhoods of the supernode core.
//
// The core's aggregated write pattern a = sum_{s in M} |v_s| picks a support
// S = TopK(a) of residual dimensions. A channel's write connectivity is the
// share of its |v_j| L1 mass inside S; the write halo is the top-eta share
// of non-supernodes by that score. Read connectivity applies the same idea
// to the next layer's gate/up rows.

#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include "nodelens/analysis.hpp"
#include "nodelens/model.hpp"

namespace nodelens {

struct ConnScore {
  double value = 0.0;
  bool dead = false;  // zero L1 norm; value reported as 0
};

std::vector<double> aggregate_write_pattern(const Matrix& w_down,
                                            std::span<const std::size_t> core);

/// Indices of the K largest entries of `pattern` in rank order (ties by
/// ascending index).
std::vector<std::size_t> topk_support(std::span<const double> pattern,
                                      std::size_t k);

/// max(8, ceil(d / 16)), capped at d.
std::size_t default_support_size(std::size_t d_model);

ConnScore write_connectivity(std::span<const double> write_vector,
                             std::span<const std::size_t> support);

/// Conn for every column of W_down.
std::vector<ConnScore> write_connectivity_all(const Matrix& w_down,
                                              std::span<const std::size_t> support);

/// ceil(eta * (m - |M|)).
std::size_t halo_count(std::size_t m, std::size_t core_size, double eta);

/// Top ceil(eta * (m - |M|)) non-core channels by score; ties by index.
/// Returned sorted ascending.
std::vector<std::size_t> select_write_halo(std::span<const double> conn,
                                           std::span<const std::size_t> core,
                                           double eta);

/// ReadConn for every row of the next layer's W_gate / W_up.
std::vector<ConnScore> read_connectivity(const Matrix& w_gate_next,
                                         const Matrix& w_up_next,
                                         std::span<const std::size_t> support);

struct HaloOptions {
  std::size_t support_size = 0;  // 0 selects default_support_size(d)
  double eta = 0.10;
  double eta_read = 0.10;
};

struct HaloLayer {
  std::vector<double> write_pattern;  // a [d]
  std::vector<std::size_t> support;   // S, rank order
  std::vector<double> conn;           // [m]
  std::vector<bool> conn_dead;
  std::vector<std::size_t> write_halo;  // sorted
  /// Read connectivity of layer l+1's channels; empty for the last layer.
  std::vector<double> read_conn;
  std::vector<bool> read_dead;
  std::vector<std::size_t> read_halo;  // diagnostic hard set, sorted
};

struct HaloSet {
  std::vector<HaloLayer> layers;
  std::size_t support_size = 0;
  double eta = 0.10;
  double eta_read = 0.10;
};

HaloSet build_halo(const TinyModel& model, const SupernodeSet& supernodes,
                   const HaloOptions& options = {});

/// Write side only, from W_down matrices [d x m_l] (for example rebuilt from
/// an external stats file). Read-side fields stay empty.
HaloSet build_write_halo(const std::vector<Matrix>& w_down,
                         const SupernodeSet& supernodes,
                         const HaloOptions& options = {});

struct ReadDependenceReport {
  std::size_t layer = 0;
  /// Mean |Δu| of layer+1 channels per ReadConn bin (bin 0 = lowest).
  std::vector<double> bin_mean;
  std::vector<std::size_t> bin_count;
  /// Top-bin mean / bottom-bin mean; nullopt when the bottom bin is zero.
  std::optional<double> top_bottom_ratio;
  /// All ReadConn values equal, so the binning carries no information.
  bool degenerate_read_conn = false;
};

/// Ablates `support` at the FFN input of layer+1 on every sequence, bins
/// layer+1 channels by ReadConn and reports token-weighted mean |Δu| per bin.
ReadDependenceReport read_dependence_report(
    const TinyModel& model, std::size_t layer,
    std::span<const std::size_t> support,
    const std::vector<TokenSequence>& sequences, std::size_t n_bins = 10);

/// Equal-population bins over channels sorted by `scores` ascending (ties by
/// index): bin k receives positions [k*n/bins, (k+1)*n/bins).
std::vector<std::size_t> rank_bins(std::span<const double> scores,
                                   std::size_t n_bins);

}  // namespace nodelens
