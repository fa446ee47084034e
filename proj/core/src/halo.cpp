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

#include "nodelens/halo.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace nodelens {

namespace {

using Index = Eigen::Index;

std::vector<bool> membership(std::size_t n, std::span<const std::size_t> indices) {
  std::vector<bool> in(n, false);
  for (std::size_t i : indices) {
    if (i >= n) throw_invalid("index " + std::to_string(i) + " out of range");
    in[i] = true;
  }
  return in;
}

std::vector<double> values_of(const std::vector<ConnScore>& scores) {
  std::vector<double> out;
  out.reserve(scores.size());
  for (const auto& s : scores) out.push_back(s.value);
  return out;
}

std::vector<bool> dead_of(const std::vector<ConnScore>& scores) {
  std::vector<bool> out;
  out.reserve(scores.size());
  for (const auto& s : scores) out.push_back(s.dead);
  return out;
}

}  // namespace

std::vector<double> aggregate_write_pattern(const Matrix& w_down,
                                            std::span<const std::size_t> core) {
  if (core.empty()) throw_invalid("aggregate_write_pattern: empty supernode set");
  std::vector<double> a(static_cast<std::size_t>(w_down.rows()), 0.0);
  for (std::size_t s : core) {
    if (s >= static_cast<std::size_t>(w_down.cols())) {
      throw_invalid("aggregate_write_pattern: channel out of range");
    }
    for (Index r = 0; r < w_down.rows(); ++r) {
      a[static_cast<std::size_t>(r)] += std::abs(w_down(r, static_cast<Index>(s)));
    }
  }
  return a;
}

std::vector<std::size_t> topk_support(std::span<const double> pattern,
                                      std::size_t k) {
  if (k < 1 || k > pattern.size()) {
    throw_invalid("topk_support: K must be in [1, d]");
  }
  return top_indices(pattern, k);
}

std::size_t default_support_size(std::size_t d_model) {
  const std::size_t k = std::max<std::size_t>(8, (d_model + 15) / 16);
  return std::min(k, d_model);
}

ConnScore write_connectivity(std::span<const double> write_vector,
                             std::span<const std::size_t> support) {
  // Extended sums; exact for float-precision inputs.
  long double total = 0.0L;
  for (double v : write_vector) total += std::abs(static_cast<long double>(v));
  if (total == 0.0L) return {0.0, true};
  long double inside = 0.0L;
  for (std::size_t h : support) {
    if (h >= write_vector.size()) throw_invalid("write_connectivity: support index out of range");
    inside += std::abs(static_cast<long double>(write_vector[h]));
  }
  return {std::min(1.0, static_cast<double>(inside / total)), false};
}

std::vector<ConnScore> write_connectivity_all(const Matrix& w_down,
                                              std::span<const std::size_t> support) {
  std::vector<ConnScore> out;
  out.reserve(static_cast<std::size_t>(w_down.cols()));
  std::vector<double> column(static_cast<std::size_t>(w_down.rows()));
  for (Index j = 0; j < w_down.cols(); ++j) {
    for (Index r = 0; r < w_down.rows(); ++r) column[static_cast<std::size_t>(r)] = w_down(r, j);
    out.push_back(write_connectivity(column, support));
  }
  return out;
}

std::size_t halo_count(std::size_t m, std::size_t core_size, double eta) {
  if (!(eta > 0.0 && eta <= 1.0)) throw_invalid("halo: eta must be in (0, 1]");
  if (core_size >= m) return 0;
  const std::size_t pool = m - core_size;
  return std::min(pool, supernode_count(pool, eta));
}

std::vector<std::size_t> select_write_halo(std::span<const double> conn,
                                           std::span<const std::size_t> core,
                                           double eta) {
  const auto in_core = membership(conn.size(), core);
  std::size_t core_size = 0;
  for (bool b : in_core) core_size += b ? 1 : 0;
  const std::size_t count = halo_count(conn.size(), core_size, eta);
  std::vector<std::size_t> candidates;
  for (std::size_t j = 0; j < conn.size(); ++j) {
    if (!in_core[j]) candidates.push_back(j);
  }
  std::stable_sort(candidates.begin(), candidates.end(),
                   [&](std::size_t a, std::size_t b) { return conn[a] > conn[b]; });
  candidates.resize(count);
  std::sort(candidates.begin(), candidates.end());
  return candidates;
}

std::vector<ConnScore> read_connectivity(const Matrix& w_gate_next,
                                         const Matrix& w_up_next,
                                         std::span<const std::size_t> support) {
  if (w_gate_next.rows() != w_up_next.rows() || w_gate_next.cols() != w_up_next.cols()) {
    throw_invalid("read_connectivity: gate/up shapes differ");
  }
  for (std::size_t h : support) {
    if (h >= static_cast<std::size_t>(w_gate_next.cols())) {
      throw_invalid("read_connectivity: support index out of range");
    }
  }
  std::vector<ConnScore> out;
  out.reserve(static_cast<std::size_t>(w_gate_next.rows()));
  for (Index j = 0; j < w_gate_next.rows(); ++j) {
    long double total = 0.0L;
    for (Index c = 0; c < w_gate_next.cols(); ++c) {
      total += std::abs(static_cast<long double>(w_gate_next(j, c)));
      total += std::abs(static_cast<long double>(w_up_next(j, c)));
    }
    if (total == 0.0L) {
      out.push_back({0.0, true});
      continue;
    }
    long double inside = 0.0L;
    for (std::size_t h : support) {
      const auto c = static_cast<Index>(h);
      inside += std::abs(static_cast<long double>(w_gate_next(j, c)));
      inside += std::abs(static_cast<long double>(w_up_next(j, c)));
    }
    out.push_back({std::min(1.0, static_cast<double>(inside / total)), false});
  }
  return out;
}

HaloSet build_write_halo(const std::vector<Matrix>& w_down,
                         const SupernodeSet& supernodes,
                         const HaloOptions& options) {
  if (supernodes.layers.size() != w_down.size()) {
    throw_invalid("build_halo: supernode set does not match model depth");
  }
  if (w_down.empty()) throw_invalid("build_halo: no layers");
  HaloSet out;
  const auto d = static_cast<std::size_t>(w_down.front().rows());
  out.support_size = options.support_size == 0 ? default_support_size(d) : options.support_size;
  out.eta = options.eta;
  out.eta_read = options.eta_read;
  for (std::size_t l = 0; l < w_down.size(); ++l) {
    HaloLayer layer;
    layer.write_pattern = aggregate_write_pattern(w_down[l], supernodes.layers[l]);
    layer.support = topk_support(layer.write_pattern, out.support_size);
    const auto conn = write_connectivity_all(w_down[l], layer.support);
    layer.conn = values_of(conn);
    layer.conn_dead = dead_of(conn);
    layer.write_halo = select_write_halo(layer.conn, supernodes.layers[l], options.eta);
    out.layers.push_back(std::move(layer));
  }
  return out;
}

HaloSet build_halo(const TinyModel& model, const SupernodeSet& supernodes,
                   const HaloOptions& options) {
  std::vector<Matrix> w_down;
  for (const auto& layer : model.layers) w_down.push_back(layer.w_down);
  HaloSet out = build_write_halo(w_down, supernodes, options);
  for (std::size_t l = 0; l + 1 < model.layers.size(); ++l) {
    HaloLayer& layer = out.layers[l];
    const LayerWeights& next = model.layers[l + 1];
    const auto read = read_connectivity(next.w_gate, next.w_up, layer.support);
    layer.read_conn = values_of(read);
    layer.read_dead = dead_of(read);
    auto top = top_indices(layer.read_conn,
                           supernode_count(layer.read_conn.size(), options.eta_read));
    std::sort(top.begin(), top.end());
    layer.read_halo = std::move(top);
  }
  return out;
}

std::vector<std::size_t> rank_bins(std::span<const double> scores,
                                   std::size_t n_bins) {
  if (n_bins == 0) throw_invalid("rank_bins: need at least one bin");
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  std::vector<std::size_t> bin(scores.size());
  const std::size_t n = scores.size();
  for (std::size_t k = 0; k < n_bins; ++k) {
    for (std::size_t pos = n * k / n_bins; pos < n * (k + 1) / n_bins; ++pos) {
      bin[order[pos]] = k;
    }
  }
  return bin;
}

ReadDependenceReport read_dependence_report(
    const TinyModel& model, std::size_t layer,
    std::span<const std::size_t> support,
    const std::vector<TokenSequence>& sequences, std::size_t n_bins) {
  if (layer + 1 >= model.layers.size()) {
    throw_invalid("read_dependence_report: layer has no successor");
  }
  if (sequences.empty()) throw_invalid("read_dependence_report: no sequences");
  const LayerWeights& next = model.layers[layer + 1];
  const std::size_t m = next.ffn_width();
  const auto read = values_of(read_connectivity(next.w_gate, next.w_up, support));

  std::vector<std::vector<double>> per_sequence(sequences.size());
  parallel_for(sequences.size(), [&](std::size_t i) {
    per_sequence[i] = ablate_support_input(model, layer, support, sequences[i]);
  });
  std::vector<double> delta(m, 0.0);
  double tokens = 0.0;
  for (std::size_t i = 0; i < sequences.size(); ++i) {
    const auto weight = static_cast<double>(sequences[i].size());
    for (std::size_t j = 0; j < m; ++j) delta[j] += per_sequence[i][j] * weight;
    tokens += weight;
  }
  for (double& v : delta) v /= tokens;

  ReadDependenceReport out;
  out.layer = layer;
  out.degenerate_read_conn =
      std::adjacent_find(read.begin(), read.end(), std::not_equal_to<>()) == read.end();
  const auto bins = rank_bins(read, n_bins);
  out.bin_mean.assign(n_bins, 0.0);
  out.bin_count.assign(n_bins, 0);
  for (std::size_t j = 0; j < m; ++j) {
    out.bin_mean[bins[j]] += delta[j];
    out.bin_count[bins[j]] += 1;
  }
  for (std::size_t k = 0; k < n_bins; ++k) {
    if (out.bin_count[k] > 0) out.bin_mean[k] /= static_cast<double>(out.bin_count[k]);
  }
  if (out.bin_mean.front() > 0.0) {
    out.top_bottom_ratio = out.bin_mean.back() / out.bin_mean.front();
  }
  return out;
}

}  // namespace nodelens
