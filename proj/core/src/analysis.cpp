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

#include "nodelens/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace nodelens {

namespace {

void check_fraction(double fraction, const char* what) {
  if (!(fraction > 0.0 && fraction <= 1.0)) {
    throw_invalid(std::string(what) + ": fraction must be in (0, 1]");
  }
}

/// Values sorted descending (stable by index).
std::vector<double> sorted_descending(std::span<const double> values) {
  std::vector<double> out(values.begin(), values.end());
  std::stable_sort(out.begin(), out.end(), std::greater<>());
  return out;
}

std::vector<double> average_ranks(std::span<const double> values) {
  std::vector<std::size_t> order(values.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
  std::vector<double> ranks(values.size());
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    while (j + 1 < order.size() && values[order[j + 1]] == values[order[i]]) ++j;
    const double rank = 0.5 * static_cast<double>(i + j);
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = rank;
    i = j + 1;
  }
  return ranks;
}

/// Replaces non-positive entries by the smallest positive entry, then logs.
std::vector<double> safe_log(std::vector<double> values, bool& replaced) {
  double floor = std::numeric_limits<double>::infinity();
  for (double v : values) {
    if (v > 0.0) floor = std::min(floor, v);
  }
  if (!std::isfinite(floor)) floor = 1.0;  // all zero: constant after log
  for (double& v : values) {
    if (!(v > 0.0)) {
      v = floor;
      replaced = true;
    }
    v = std::log(v);
  }
  return values;
}

}  // namespace

std::vector<std::size_t> SupernodeSet::counts() const {
  std::vector<std::size_t> out;
  for (const auto& l : layers) out.push_back(l.size());
  return out;
}

std::size_t SupernodeSet::total() const {
  std::size_t n = 0;
  for (const auto& l : layers) n += l.size();
  return n;
}

std::size_t supernode_count(std::size_t m, double fraction) {
  check_fraction(fraction, "supernode_count");
  // The small offset absorbs representation error in products such as
  // 0.07 * 100 = 7.000000000000001.
  const double raw = fraction * static_cast<double>(m);
  auto count = static_cast<std::size_t>(std::ceil(raw - 1e-9 * std::max(1.0, raw)));
  return std::clamp<std::size_t>(count, 1, m);
}

std::vector<std::size_t> top_indices(std::span<const double> values,
                                     std::size_t count) {
  std::vector<std::size_t> order(values.size());
  std::iota(order.begin(), order.end(), 0);
  count = std::min(count, values.size());
  std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(count),
                    order.end(), [&](std::size_t a, std::size_t b) {
                      if (values[a] != values[b]) return values[a] > values[b];
                      return a < b;
                    });
  order.resize(count);
  return order;
}

SupernodeSet select_supernodes(const ChannelStats& stats, double fraction) {
  check_fraction(fraction, "select_supernodes");
  SupernodeSet out;
  out.fraction = fraction;
  for (const auto& lp : stats.lp) {
    auto top = top_indices(lp, supernode_count(lp.size(), fraction));
    std::sort(top.begin(), top.end());
    out.layers.push_back(std::move(top));
  }
  return out;
}

std::optional<double> top_fraction_mass(std::span<const double> values,
                                        double fraction) {
  check_fraction(fraction, "top_fraction_mass");
  if (values.empty()) return std::nullopt;
  const auto sorted = sorted_descending(values);
  const double total = std::accumulate(sorted.begin(), sorted.end(), 0.0);
  if (!(total > 0.0)) return std::nullopt;
  const std::size_t count = supernode_count(values.size(), fraction);
  const double top = std::accumulate(sorted.begin(),
                                     sorted.begin() + static_cast<std::ptrdiff_t>(count), 0.0);
  return top / total;
}

std::vector<std::optional<double>> top_rho_mass(const ChannelStats& stats,
                                                double fraction) {
  std::vector<std::optional<double>> out;
  for (const auto& lp : stats.lp) out.push_back(top_fraction_mass(lp, fraction));
  return out;
}

std::vector<std::optional<double>> max_mean_ratio(const ChannelStats& stats) {
  std::vector<std::optional<double>> out;
  for (const auto& lp : stats.lp) {
    if (lp.empty()) {
      out.emplace_back();
      continue;
    }
    const double mean = std::accumulate(lp.begin(), lp.end(), 0.0) /
                        static_cast<double>(lp.size());
    if (!(mean > 0.0)) {
      out.emplace_back();
      continue;
    }
    out.emplace_back(*std::max_element(lp.begin(), lp.end()) / mean);
  }
  return out;
}

std::vector<double> default_percentile_grid() {
  std::vector<double> grid;
  grid.reserve(100);
  for (int k = 1; k <= 100; ++k) {
    grid.push_back(0.1 * std::pow(1000.0, static_cast<double>(k) / 100.0));
  }
  grid.back() = 100.0;
  return grid;
}

CumulativeCurve cumulative_curve(const ChannelStats& stats,
                                 std::span<const double> percentiles) {
  for (double p : percentiles) {
    if (!(p > 0.0 && p <= 100.0)) {
      throw_invalid("cumulative_curve: percentiles must lie in (0, 100]");
    }
  }
  CumulativeCurve out;
  out.percentiles.assign(percentiles.begin(), percentiles.end());
  for (const auto& lp : stats.lp) {
    const auto sorted = sorted_descending(lp);
    std::vector<double> prefix(sorted.size() + 1, 0.0);
    for (std::size_t i = 0; i < sorted.size(); ++i) prefix[i + 1] = prefix[i] + sorted[i];
    const double total = prefix.back();
    const auto m = static_cast<double>(sorted.size());
    std::vector<double> curve;
    for (double p : percentiles) {
      if (!(total > 0.0)) {
        curve.push_back(0.0);
        continue;
      }
      const double x = p / 100.0 * m;
      if (x >= m) {
        curve.push_back(1.0);
        continue;
      }
      const auto whole = static_cast<std::size_t>(std::floor(x));
      const double partial = (x - static_cast<double>(whole)) * sorted[whole];
      curve.push_back((prefix[whole] + partial) / total);
    }
    out.mass.push_back(std::move(curve));
  }
  return out;
}

double jaccard(std::span<const std::size_t> a, std::span<const std::size_t> b) {
  std::vector<std::size_t> sa(a.begin(), a.end());
  std::vector<std::size_t> sb(b.begin(), b.end());
  std::sort(sa.begin(), sa.end());
  sa.erase(std::unique(sa.begin(), sa.end()), sa.end());
  std::sort(sb.begin(), sb.end());
  sb.erase(std::unique(sb.begin(), sb.end()), sb.end());
  if (sa.empty() && sb.empty()) return 1.0;
  std::vector<std::size_t> common;
  std::set_intersection(sa.begin(), sa.end(), sb.begin(), sb.end(),
                        std::back_inserter(common));
  const std::size_t uni = sa.size() + sb.size() - common.size();
  return static_cast<double>(common.size()) / static_cast<double>(uni);
}

FactorMasses factor_masses(const ChannelStats& stats, double fraction) {
  check_fraction(fraction, "factor_masses");
  FactorMasses out;
  std::array<double, 4> pooled_top{};
  std::array<double, 4> pooled_total{};
  std::array<std::vector<double>, 4> layer_values;
  for (std::size_t l = 0; l < stats.n_layers(); ++l) {
    const std::size_t m = stats.lp[l].size();
    std::array<std::vector<double>, 4> metric;
    metric[0] = stats.act_power[l];
    metric[1] = stats.curvature[l];
    metric[2].resize(m);
    for (std::size_t i = 0; i < m; ++i) {
      metric[2][i] = stats.act_power[l][i] * stats.curvature[l][i];
    }
    metric[3] = stats.lp[l];
    std::array<std::optional<double>, 4> row;
    for (std::size_t k = 0; k < 4; ++k) {
      row[k] = top_fraction_mass(metric[k], fraction);
      if (row[k]) layer_values[k].push_back(*row[k]);
      const auto sorted = sorted_descending(metric[k]);
      const std::size_t count = supernode_count(m, fraction);
      pooled_top[k] += std::accumulate(
          sorted.begin(), sorted.begin() + static_cast<std::ptrdiff_t>(count), 0.0);
      pooled_total[k] += std::accumulate(sorted.begin(), sorted.end(), 0.0);
    }
    out.per_layer.push_back(row);
  }
  for (std::size_t k = 0; k < 4; ++k) {
    if (!layer_values[k].empty()) out.median[k] = median(layer_values[k]);
    if (pooled_total[k] > 0.0) out.pooled[k] = pooled_top[k] / pooled_total[k];
  }
  return out;
}

Correlation spearman(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw_invalid("spearman: length mismatch");
  if (x.size() < 2) return {0.0, true};
  const auto rx = average_ranks(x);
  const auto ry = average_ranks(y);
  const auto n = static_cast<double>(x.size());
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < rx.size(); ++i) {
    mx += rx[i];
    my += ry[i];
  }
  mx /= n;
  my /= n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < rx.size(); ++i) {
    sxy += (rx[i] - mx) * (ry[i] - my);
    sxx += (rx[i] - mx) * (rx[i] - mx);
    syy += (ry[i] - my) * (ry[i] - my);
  }
  if (sxx <= 0.0 || syy <= 0.0) return {0.0, true};
  return {std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0), false};
}

double median(std::vector<double> values) {
  if (values.empty()) throw_invalid("median: empty input");
  std::sort(values.begin(), values.end());
  const std::size_t n = values.size();
  return n % 2 == 1 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

MechanismControls mechanism_controls(const ChannelStats& stats,
                                     const TinyModel& model) {
  if (stats.widths() != model.ffn_widths()) {
    throw_invalid("mechanism_controls: stats and model widths differ");
  }
  MechanismControls out;
  std::array<std::vector<double>, 4> columns;
  for (std::size_t l = 0; l < stats.n_layers(); ++l) {
    const LayerWeights& w = model.layers[l];
    const std::size_t m = w.ffn_width();
    std::array<std::vector<double>, 4> factor;
    factor[0] = stats.act_power[l];
    for (std::size_t i = 0; i < m; ++i) {
      const auto ii = static_cast<Eigen::Index>(i);
      factor[1].push_back(w.w_down.col(ii).norm());
      factor[2].push_back(w.w_up.row(ii).norm());
      factor[3].push_back(w.w_gate.row(ii).norm());
    }
    const auto log_lp = safe_log(stats.lp[l], out.zeros_replaced);
    std::array<Correlation, 4> row;
    for (std::size_t k = 0; k < 4; ++k) {
      const auto log_f = safe_log(factor[k], out.zeros_replaced);
      row[k] = spearman(log_lp, log_f);
      columns[k].push_back(row[k].value);
    }
    out.per_layer.push_back(row);
  }
  for (std::size_t k = 0; k < 4; ++k) {
    if (!columns[k].empty()) out.median[k] = median(columns[k]);
  }
  return out;
}

ConcentrationReport concentration_report(const ChannelStats& stats,
                                         double fraction,
                                         std::span<const double> percentiles) {
  ConcentrationReport out;
  out.top_mass = top_rho_mass(stats, fraction);
  out.max_mean = max_mean_ratio(stats);
  out.curve = cumulative_curve(stats, percentiles);
  out.fingerprint = stats.fingerprint;
  out.fraction = fraction;
  return out;
}

}  // namespace nodelens
