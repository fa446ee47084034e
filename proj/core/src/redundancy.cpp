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

#include "nodelens/redundancy.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>

namespace nodelens {

double red_score(double rho) {
  if (!std::isfinite(rho) || std::abs(rho) > 1.0 + 1e-9) {
    throw_invalid("red_score: correlation outside [-1, 1]");
  }
  const double positive = std::min(std::max(rho, 0.0), kMaxCorrelation);
  return -0.5 * std::log1p(-positive * positive);
}

double top_k_mean(std::span<const double> values, std::size_t k) {
  if (values.empty()) throw_invalid("top_k_mean: empty input");
  if (k == 0) throw_invalid("top_k_mean: k must be positive");
  std::vector<double> sorted(values.begin(), values.end());
  std::sort(sorted.begin(), sorted.end(), std::greater<>());
  const std::size_t n = std::min(k, sorted.size());
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) total += sorted[i];
  return total / static_cast<double>(n);
}

double directed_redundancy(const QCross& qcross, std::size_t layer,
                           std::size_t j, std::size_t k) {
  if (layer >= qcross.layers.size()) throw_invalid("directed_redundancy: bad layer");
  const auto& core = qcross.layers[layer].core;
  if (core.empty()) throw_invalid("directed_redundancy: empty supernode set");
  std::vector<double> red;
  red.reserve(core.size());
  for (std::size_t s : core) red.push_back(red_score(pearson(qcross, layer, j, s).value));
  return top_k_mean(red, k);
}

std::vector<double> redundancy_ranks(std::span<const double> values,
                                     std::span<const std::size_t> channels) {
  if (values.size() != channels.size()) throw_invalid("redundancy_ranks: size mismatch");
  const std::size_t n = values.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (values[a] != values[b]) return values[a] < values[b];
    return channels[a] < channels[b];
  });
  std::vector<double> rank(n, 0.0);
  if (n <= 1) return rank;
  for (std::size_t pos = 0; pos < n; ++pos) {
    rank[order[pos]] = static_cast<double>(pos) / static_cast<double>(n - 1);
  }
  return rank;
}

double protect_from_rank(double rank, double alpha, double gamma) {
  return alpha + (1.0 - alpha) * (1.0 - std::pow(rank, gamma));
}

std::vector<double> protect_scores(std::size_t m,
                                   std::span<const std::size_t> halo,
                                   std::span<const double> halo_redundancy,
                                   double alpha, double gamma) {
  if (!(alpha > 0.0 && alpha <= 1.0)) throw_invalid("protect: alpha must be in (0, 1]");
  if (!(gamma >= 1.0)) throw_invalid("protect: gamma must be >= 1");
  std::vector<double> protect(m, 1.0);
  const auto rank = redundancy_ranks(halo_redundancy, halo);
  for (std::size_t k = 0; k < halo.size(); ++k) {
    if (halo[k] >= m) throw_invalid("protect: halo channel out of range");
    protect[halo[k]] = protect_from_rank(rank[k], alpha, gamma);
  }
  return protect;
}

RedundancyTable build_redundancy_table(const QCross& qcross,
                                       const SupernodeSet& supernodes,
                                       const HaloSet& halos,
                                       const RedundancyOptions& options) {
  if (qcross.layers.size() != halos.layers.size() ||
      supernodes.layers.size() != halos.layers.size()) {
    throw_invalid("build_redundancy_table: layer counts differ");
  }
  if (options.k == 0) throw_invalid("build_redundancy_table: k must be positive");
  RedundancyTable table;
  table.options = options;
  for (std::size_t l = 0; l < halos.layers.size(); ++l) {
    if (qcross.layers[l].core != supernodes.layers[l]) {
      throw_invalid("build_redundancy_table: q statistics were gathered "
                    "against a different core in layer " + std::to_string(l));
    }
    const std::size_t m = qcross.layers[l].mean_q.size();
    RedundancyLayer layer;
    layer.redundancy_all.assign(m, 0.0);
    std::vector<bool> in_core(m, false);
    for (std::size_t s : supernodes.layers[l]) in_core[s] = true;
    for (std::size_t j = 0; j < m; ++j) {
      if (!in_core[j]) layer.redundancy_all[j] = directed_redundancy(qcross, l, j, options.k);
    }
    layer.halo = halos.layers[l].write_halo;
    for (std::size_t j : layer.halo) layer.halo_redundancy.push_back(layer.redundancy_all[j]);
    layer.halo_rank = redundancy_ranks(layer.halo_redundancy, layer.halo);
    layer.protect = protect_scores(m, layer.halo, layer.halo_redundancy,
                                   options.alpha, options.gamma);
    table.layers.push_back(std::move(layer));
  }
  return table;
}

}  // namespace nodelens
