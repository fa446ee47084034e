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

#include "nodelens/scar.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <tuple>

namespace nodelens {

namespace {

using Index = Eigen::Index;

std::vector<double> expand_caps(std::span<const double> caps, std::size_t layers) {
  std::vector<double> out;
  if (caps.size() == 1) {
    out.assign(layers, caps.front());
  } else if (caps.size() == layers) {
    out.assign(caps.begin(), caps.end());
  } else {
    throw_invalid("caps: expected 1 or " + std::to_string(layers) + " values");
  }
  for (double c : out) {
    if (!(c > 0.0 && c <= 1.0)) throw_invalid("caps must lie in (0, 1]");
  }
  return out;
}

void check_sparsity(double sparsity) {
  if (!(sparsity > 0.0 && sparsity < 1.0)) {
    throw_invalid("sparsity must lie in (0, 1)");
  }
}

[[noreturn]] void throw_infeasible(std::size_t budget, std::size_t capacity,
                                   const std::vector<std::size_t>& per_layer) {
  std::ostringstream msg;
  msg << "infeasible budget: need " << budget << " channels but caps and "
      << "protection allow only " << capacity << " (per-layer capacity:";
  for (std::size_t c : per_layer) msg << ' ' << c;
  msg << ')';
  throw Error(ErrorKind::kInfeasible, msg.str());
}

void sort_layers(ChannelSets& sets) {
  for (auto& s : sets) std::sort(s.begin(), s.end());
}

}  // namespace

std::string_view to_string(ScarVariant variant) {
  switch (variant) {
    case ScarVariant::kLp: return "lp";
    case ScarVariant::kProt: return "prot";
    case ScarVariant::kConn: return "conn";
  }
  return "?";
}

std::string_view to_string(BaselineMethod method) {
  switch (method) {
    case BaselineMethod::kMagnitude: return "magnitude";
    case BaselineMethod::kWanda: return "wanda";
    case BaselineMethod::kActL2: return "act-l2";
    case BaselineMethod::kRandom: return "random";
  }
  return "?";
}

ScarVariant parse_variant(std::string_view name) {
  if (name == "lp") return ScarVariant::kLp;
  if (name == "prot") return ScarVariant::kProt;
  if (name == "conn") return ScarVariant::kConn;
  throw_invalid("unknown SCAR variant '" + std::string(name) + "'");
}

BaselineMethod parse_baseline(std::string_view name) {
  if (name == "magnitude") return BaselineMethod::kMagnitude;
  if (name == "wanda") return BaselineMethod::kWanda;
  if (name == "act-l2" || name == "act_l2") return BaselineMethod::kActL2;
  if (name == "random") return BaselineMethod::kRandom;
  throw_invalid("unknown baseline method '" + std::string(name) + "'");
}

std::size_t PruneMask::total_pruned() const {
  std::size_t n = 0;
  for (const auto& l : pruned) n += l.size();
  return n;
}

LayerScores scar_scores(ScarVariant variant, const ChannelStats& stats,
                        const LayerScores* protect, const LayerScores* conn) {
  const auto widths = stats.widths();
  auto check_aligned = [&](const LayerScores* table, const char* name) {
    if (!table) {
      throw_invalid(std::string("scar_scores: variant '") +
                    std::string(to_string(variant)) + "' requires " + name);
    }
    if (table->size() != widths.size()) throw_invalid(std::string("scar_scores: ") + name + " layers");
    for (std::size_t l = 0; l < widths.size(); ++l) {
      if ((*table)[l].size() != widths[l]) {
        throw_invalid(std::string("scar_scores: ") + name + " width mismatch");
      }
    }
  };
  if (variant != ScarVariant::kLp) check_aligned(protect, "Protect");
  if (variant == ScarVariant::kConn) check_aligned(conn, "Conn");

  LayerScores out = stats.lp;
  for (std::size_t l = 0; l < out.size(); ++l) {
    for (std::size_t i = 0; i < out[l].size(); ++i) {
      switch (variant) {
        case ScarVariant::kLp:
          break;
        case ScarVariant::kProt:
          out[l][i] *= (*protect)[l][i];
          break;
        case ScarVariant::kConn: {
          const double c = (*conn)[l][i];
          out[l][i] *= (1.0 - c) + c * (*protect)[l][i];
          break;
        }
      }
    }
  }
  return out;
}

LayerScores baseline_scores(BaselineMethod method, const TinyModel& model,
                            const ChannelStats* stats, std::uint64_t seed) {
  const auto widths = model.ffn_widths();
  if (method == BaselineMethod::kWanda || method == BaselineMethod::kActL2) {
    if (!stats) {
      throw_invalid("baseline '" + std::string(to_string(method)) +
                    "' requires calibration statistics");
    }
    if (stats->widths() != widths) throw_invalid("baseline: stats/model widths differ");
    if (method == BaselineMethod::kWanda && stats->input_power.size() != widths.size()) {
      throw_invalid("baseline 'wanda' requires FFN input statistics");
    }
  }
  LayerScores out(widths.size());
  Rng rng(seed);
  for (std::size_t l = 0; l < widths.size(); ++l) {
    const LayerWeights& w = model.layers[l];
    out[l].resize(widths[l]);
    for (std::size_t i = 0; i < widths[l]; ++i) {
      const auto ii = static_cast<Index>(i);
      switch (method) {
        case BaselineMethod::kMagnitude:
          out[l][i] = std::sqrt(w.w_up.row(ii).squaredNorm() +
                                w.w_gate.row(ii).squaredNorm() +
                                w.w_down.col(ii).squaredNorm());
          break;
        case BaselineMethod::kWanda: {
          double read = 0.0;
          for (Index c = 0; c < w.w_up.cols(); ++c) {
            const double x_rms = std::sqrt(stats->input_power[l][static_cast<std::size_t>(c)]);
            read += (std::abs(w.w_up(ii, c)) + std::abs(w.w_gate(ii, c))) * x_rms;
          }
          const double u_rms = std::sqrt(stats->act_power[l][i]);
          out[l][i] = read + w.w_down.col(ii).cwiseAbs().sum() * u_rms;
          break;
        }
        case BaselineMethod::kActL2:
          out[l][i] = std::sqrt(stats->act_power[l][i]);
          break;
        case BaselineMethod::kRandom:
          out[l][i] = rng.uniform();
          break;
      }
    }
  }
  return out;
}

std::size_t cap_limit(std::size_t m, double cap) {
  const double raw = cap * static_cast<double>(m);
  return std::min(m, static_cast<std::size_t>(std::floor(raw + 1e-9 * std::max(1.0, raw))));
}

std::size_t prune_budget(std::size_t total_channels, double sparsity) {
  check_sparsity(sparsity);
  const double raw = sparsity * static_cast<double>(total_channels);
  return static_cast<std::size_t>(std::floor(raw + 1e-9 * std::max(1.0, raw)));
}

PruneMask select_mask(const LayerScores& scores, const ChannelSets& protected_set,
                      double sparsity, std::span<const double> caps) {
  check_sparsity(sparsity);
  const std::size_t layers = scores.size();
  if (layers == 0) throw_invalid("select_mask: no layers");
  if (!protected_set.empty() && protected_set.size() != layers) {
    throw_invalid("select_mask: protected set layer count mismatch");
  }
  PruneMask mask;
  mask.sparsity = sparsity;
  mask.caps = expand_caps(caps, layers);
  mask.pruned.resize(layers);

  struct Candidate {
    double score;
    std::size_t layer;
    std::size_t channel;
  };
  std::vector<Candidate> pool;
  std::vector<std::size_t> limit(layers), available(layers, 0);
  std::size_t total = 0;
  for (std::size_t l = 0; l < layers; ++l) {
    const std::size_t m = scores[l].size();
    mask.widths.push_back(m);
    total += m;
    limit[l] = cap_limit(m, mask.caps[l]);
    std::vector<bool> is_protected(m, false);
    if (!protected_set.empty()) {
      for (std::size_t c : protected_set[l]) {
        if (c >= m) throw_invalid("select_mask: protected channel out of range");
        is_protected[c] = true;
      }
    }
    for (std::size_t i = 0; i < m; ++i) {
      if (is_protected[i]) continue;
      if (!std::isfinite(scores[l][i])) throw_invalid("select_mask: non-finite score");
      pool.push_back({scores[l][i], l, i});
      ++available[l];
    }
  }

  const std::size_t budget = prune_budget(total, sparsity);
  std::vector<std::size_t> capacity(layers);
  std::size_t reachable = 0;
  for (std::size_t l = 0; l < layers; ++l) {
    capacity[l] = std::min(limit[l], available[l]);
    reachable += capacity[l];
  }
  if (reachable < budget) throw_infeasible(budget, reachable, capacity);

  std::sort(pool.begin(), pool.end(), [](const Candidate& a, const Candidate& b) {
    return std::tie(a.score, a.layer, a.channel) < std::tie(b.score, b.layer, b.channel);
  });
  std::size_t chosen = 0;
  for (const Candidate& c : pool) {
    if (chosen == budget) break;
    if (mask.pruned[c.layer].size() >= limit[c.layer]) continue;
    mask.pruned[c.layer].push_back(c.channel);
    ++chosen;
  }
  sort_layers(mask.pruned);
  return mask;
}

PruneMask forced_hit_mask(const SupernodeSet& supernodes,
                          const std::vector<std::size_t>& widths,
                          double hit_fraction, double sparsity,
                          std::span<const double> caps, std::uint64_t seed) {
  check_sparsity(sparsity);
  if (!(hit_fraction >= 0.0 && hit_fraction <= 1.0)) {
    throw_invalid("forced_hit_mask: hit fraction must lie in [0, 1]");
  }
  if (supernodes.layers.size() != widths.size()) {
    throw_invalid("forced_hit_mask: supernode set does not match widths");
  }
  const std::size_t layers = widths.size();
  PruneMask mask;
  mask.widths = widths;
  mask.sparsity = sparsity;
  mask.caps = expand_caps(caps, layers);
  mask.seed = seed;
  mask.method = "forced-hit";
  mask.pruned.resize(layers);

  std::size_t total = 0;
  for (std::size_t w : widths) total += w;
  const std::size_t budget = prune_budget(total, sparsity);
  const auto hits = static_cast<std::size_t>(
      std::llround(hit_fraction * static_cast<double>(supernodes.total())));
  if (hits > budget) {
    throw Error(ErrorKind::kInfeasible,
                "forced_hit_mask: " + std::to_string(hits) +
                    " forced supernodes exceed the budget of " + std::to_string(budget));
  }

  using Slot = std::pair<std::size_t, std::size_t>;  // (layer, channel)
  std::vector<Slot> core, rest;
  for (std::size_t l = 0; l < layers; ++l) {
    std::vector<bool> in_core(widths[l], false);
    for (std::size_t c : supernodes.layers[l]) {
      if (c >= widths[l]) throw_invalid("forced_hit_mask: supernode out of range");
      in_core[c] = true;
      core.emplace_back(l, c);
    }
    for (std::size_t c = 0; c < widths[l]; ++c) {
      if (!in_core[c]) rest.emplace_back(l, c);
    }
  }
  Rng core_rng(derive_seed(seed, 1));
  Rng rest_rng(derive_seed(seed, 2));
  core_rng.shuffle(core);
  rest_rng.shuffle(rest);

  std::vector<std::size_t> limit(layers);
  for (std::size_t l = 0; l < layers; ++l) limit[l] = cap_limit(widths[l], mask.caps[l]);
  std::size_t chosen_hits = 0;
  for (const auto& [l, c] : core) {
    if (chosen_hits == hits) break;
    if (mask.pruned[l].size() >= limit[l]) continue;
    mask.pruned[l].push_back(c);
    ++chosen_hits;
  }
  if (chosen_hits < hits) {
    throw Error(ErrorKind::kInfeasible, "forced_hit_mask: caps prevent forcing " +
                                            std::to_string(hits) + " supernodes");
  }
  std::size_t chosen = chosen_hits;
  for (const auto& [l, c] : rest) {
    if (chosen == budget) break;
    if (mask.pruned[l].size() >= limit[l]) continue;
    mask.pruned[l].push_back(c);
    ++chosen;
  }
  if (chosen < budget) {
    std::vector<std::size_t> capacity(limit);
    throw_infeasible(budget, chosen, capacity);
  }
  sort_layers(mask.pruned);
  mask.hit_rate = supernodes.total() > 0
                      ? std::optional<double>(hit_rate(mask.pruned, supernodes))
                      : std::nullopt;
  return mask;
}

ChannelSets random_protected_set(const std::vector<std::size_t>& widths,
                                 const SupernodeSet& like, std::uint64_t seed) {
  if (like.layers.size() != widths.size()) {
    throw_invalid("random_protected_set: layer count mismatch");
  }
  Rng rng(seed);
  ChannelSets out(widths.size());
  for (std::size_t l = 0; l < widths.size(); ++l) {
    std::vector<std::size_t> all(widths[l]);
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
    rng.shuffle(all);
    all.resize(std::min(like.layers[l].size(), all.size()));
    std::sort(all.begin(), all.end());
    out[l] = std::move(all);
  }
  return out;
}

double hit_rate(const ChannelSets& pruned, const SupernodeSet& supernodes) {
  const std::size_t total = supernodes.total();
  if (total == 0) throw_invalid("hit_rate: empty supernode set");
  if (pruned.size() != supernodes.layers.size()) {
    throw_invalid("hit_rate: mask and supernode set have different depths");
  }
  std::size_t hits = 0;
  for (std::size_t l = 0; l < pruned.size(); ++l) {
    std::vector<std::size_t> a = pruned[l];
    std::vector<std::size_t> b = supernodes.layers[l];
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());
    std::vector<std::size_t> common;
    std::set_intersection(a.begin(), a.end(), b.begin(), b.end(),
                          std::back_inserter(common));
    hits += common.size();
  }
  return static_cast<double>(hits) / static_cast<double>(total);
}

}  // namespace nodelens
