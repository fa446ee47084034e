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

#include "nodelens/eval.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "nodelens/scar.hpp"

namespace nodelens {

namespace {

using Index = Eigen::Index;

double sum_nll(const Matrix& logits, std::span<const TokenId> targets) {
  double total = 0.0;
  for (double v : token_nll(logits, targets)) total += v;
  return total;
}

std::span<const TokenId> inputs_of(const TokenSequence& block) {
  return std::span<const TokenId>(block.data(), block.size() - 1);
}

std::span<const TokenId> targets_of(const TokenSequence& block) {
  return std::span<const TokenId>(block.data() + 1, block.size() - 1);
}

void check_set(const EvalSet& set) {
  if (set.blocks.empty()) throw_invalid("evaluation set has no blocks");
}

ArmResult finish_arm(ArmResult arm) {
  if (!arm.delta.empty()) {
    arm.mean = std::accumulate(arm.delta.begin(), arm.delta.end(), 0.0) /
               static_cast<double>(arm.delta.size());
  }
  return arm;
}

std::vector<std::size_t> counts_of(const ChannelSets& sets) {
  std::vector<std::size_t> out;
  for (const auto& s : sets) out.push_back(s.size());
  return out;
}

}  // namespace

EvalSet make_eval_set(const TokenSequence& corpus, std::size_t block_len,
                      std::size_t max_tokens) {
  if (block_len == 0) throw_invalid("block length must be positive");
  if (corpus.size() < block_len + 1) {
    throw_invalid("corpus of " + std::to_string(corpus.size()) +
                  " tokens is shorter than one block of " +
                  std::to_string(block_len + 1));
  }
  EvalSet set;
  set.block_len = block_len;
  const std::size_t n_blocks = (corpus.size() - 1) / block_len;
  for (std::size_t b = 0; b < n_blocks; ++b) {
    if (max_tokens > 0 && !set.blocks.empty() && (b + 1) * block_len > max_tokens) break;
    const auto first = corpus.begin() + static_cast<std::ptrdiff_t>(b * block_len);
    set.blocks.emplace_back(first, first + static_cast<std::ptrdiff_t>(block_len + 1));
  }
  return set;
}

NllSummary evaluate(const EvalSet& set, const LogitsFn& logits_fn) {
  check_set(set);
  std::vector<double> per_block(set.blocks.size(), 0.0);
  parallel_for(set.blocks.size(), [&](std::size_t b) {
    const TokenSequence& block = set.blocks[b];
    per_block[b] = sum_nll(logits_fn(inputs_of(block)), targets_of(block));
  });
  double total = 0.0;
  for (double v : per_block) total += v;
  NllSummary out;
  out.tokens = set.tokens();
  out.mean_nll = total / static_cast<double>(out.tokens);
  if (!std::isfinite(out.mean_nll)) {
    throw Error(ErrorKind::kNumerical, "evaluation produced a non-finite NLL");
  }
  out.perplexity = std::exp(out.mean_nll);
  return out;
}

NllSummary model_perplexity(const TinyModel& model, const EvalSet& set) {
  return evaluate(set, [&](std::span<const TokenId> t) { return forward_logits(model, t); });
}

NllSummary masked_perplexity(const TinyModel& model, const ChannelSets& mask,
                             const EvalSet& set) {
  return evaluate(set, [&](std::span<const TokenId> t) { return masked_forward(model, mask, t); });
}

NllSummary blockwise_perplexity(const TinyModel& model,
                                const TokenSequence& corpus,
                                std::size_t block_len) {
  return model_perplexity(model, make_eval_set(corpus, block_len));
}

std::vector<double> ablation_delta(const TinyModel& model, const EvalSet& set,
                                   const std::vector<ChannelSets>& channel_sets) {
  const ChannelSets none(model.layers.size());
  const double clean = masked_perplexity(model, none, set).mean_nll;
  std::vector<double> out;
  out.reserve(channel_sets.size());
  for (const ChannelSets& sets : channel_sets) {
    out.push_back(masked_perplexity(model, sets, set).mean_nll - clean);
  }
  return out;
}

std::vector<std::vector<double>> single_channel_deltas(const TinyModel& model,
                                                       const EvalSet& set) {
  check_set(set);
  const auto widths = model.ffn_widths();
  const std::size_t layers = widths.size();
  std::vector<std::size_t> offset(layers + 1, 0);
  for (std::size_t l = 0; l < layers; ++l) offset[l + 1] = offset[l] + widths[l];

  // Per block: clean NLL sum and per-channel ablated NLL sums.
  std::vector<double> clean(set.blocks.size(), 0.0);
  std::vector<std::vector<double>> ablated(set.blocks.size());
  parallel_for(set.blocks.size(), [&](std::size_t b) {
    const TokenSequence& block = set.blocks[b];
    const auto targets = targets_of(block);
    const auto run = forward(model, inputs_of(block));
    clean[b] = sum_nll(run.logits, targets);
    ablated[b].assign(offset[layers], 0.0);
    for (std::size_t l = 0; l < layers; ++l) {
      const LayerCache& lc = run.cache.layers[l];
      const Matrix after = lc.x_mid + lc.y;
      const Matrix& w_down = model.layers[l].w_down;
      for (std::size_t i = 0; i < widths[l]; ++i) {
        const auto ii = static_cast<Index>(i);
        Matrix residual = after - lc.u.col(ii) * w_down.col(ii).transpose();
        ablated[b][offset[l] + i] =
            sum_nll(forward_from_residual(model, l + 1, std::move(residual)), targets);
      }
    }
  });

  double clean_total = 0.0;
  std::vector<double> total(offset[layers], 0.0);
  for (std::size_t b = 0; b < set.blocks.size(); ++b) {
    clean_total += clean[b];
    for (std::size_t k = 0; k < total.size(); ++k) total[k] += ablated[b][k];
  }
  const auto tokens = static_cast<double>(set.tokens());
  std::vector<std::vector<double>> out(layers);
  for (std::size_t l = 0; l < layers; ++l) {
    out[l].resize(widths[l]);
    for (std::size_t i = 0; i < widths[l]; ++i) {
      out[l][i] = total[offset[l] + i] / tokens - clean_total / tokens;
    }
  }
  return out;
}

LpValidation lp_validation_from_deltas(const ChannelStats& stats,
                                       std::vector<std::vector<double>> deltas,
                                       std::size_t n_bins) {
  if (n_bins < 2) throw_invalid("lp_validation_bins: need at least two bins");
  if (deltas.size() != stats.lp.size()) throw_invalid("lp_validation_bins: layer mismatch");
  LpValidation out;
  out.bin_mean.assign(n_bins, 0.0);
  out.bin_count.assign(n_bins, 0);
  for (std::size_t l = 0; l < deltas.size(); ++l) {
    if (deltas[l].size() != stats.lp[l].size()) {
      throw_invalid("lp_validation_bins: width mismatch");
    }
    const auto bins = rank_bins(stats.lp[l], n_bins);
    for (std::size_t i = 0; i < bins.size(); ++i) {
      out.bin_mean[bins[i]] += deltas[l][i];
      out.bin_count[bins[i]] += 1;
    }
  }
  std::vector<double> index(n_bins);
  for (std::size_t k = 0; k < n_bins; ++k) {
    index[k] = static_cast<double>(k);
    if (out.bin_count[k] > 0) out.bin_mean[k] /= static_cast<double>(out.bin_count[k]);
  }
  out.spearman = spearman(index, out.bin_mean);
  std::vector<double> ratios;
  for (const auto& r : max_mean_ratio(stats)) {
    if (r) ratios.push_back(*r);
  }
  out.weak_signal = ratios.empty() || median(ratios) < 2.0;
  out.channel_delta = std::move(deltas);
  return out;
}

LpValidation lp_validation_bins(const TinyModel& model, const ChannelStats& stats,
                                const EvalSet& set, std::size_t n_bins) {
  if (stats.widths() != model.ffn_widths()) {
    throw_invalid("lp_validation_bins: statistics do not match the model");
  }
  return lp_validation_from_deltas(stats, single_channel_deltas(model, set), n_bins);
}

SweepCurve dose_response(const TinyModel& model, const SupernodeSet& supernodes,
                         const EvalSet& set, double sparsity,
                         std::span<const double> hit_fractions,
                         std::size_t trials, std::span<const double> caps,
                         std::uint64_t seed) {
  if (trials == 0) throw_invalid("dose_response: need at least one trial");
  if (hit_fractions.empty()) throw_invalid("dose_response: no hit fractions");
  const auto widths = model.ffn_widths();
  SweepCurve curve;
  curve.sparsity = sparsity;
  curve.trials = trials;
  for (double f : hit_fractions) {
    SweepPoint point;
    point.x = f;
    for (std::size_t t = 0; t < trials; ++t) {
      const std::uint64_t trial_seed = derive_seed(seed, t);
      const PruneMask mask =
          forced_hit_mask(supernodes, widths, f, sparsity, caps, trial_seed);
      point.pruned = mask.total_pruned();
      point.values.push_back(masked_perplexity(model, mask.pruned, set).perplexity);
      point.seeds.push_back(trial_seed);
      point.hit_rates.push_back(mask.hit_rate.value_or(0.0));
    }
    const auto n = static_cast<double>(trials);
    point.mean = std::accumulate(point.values.begin(), point.values.end(), 0.0) / n;
    if (trials > 1) {
      double ss = 0.0;
      for (double v : point.values) ss += (v - point.mean) * (v - point.mean);
      point.stddev = std::sqrt(ss / (n - 1.0));
    }
    curve.points.push_back(std::move(point));
  }
  std::vector<double> xs, ys;
  for (const auto& p : curve.points) {
    xs.push_back(p.x);
    ys.push_back(p.mean);
  }
  curve.spearman = spearman(xs, ys);
  return curve;
}

ChannelSets random_channels(const std::vector<std::size_t>& widths,
                            const std::vector<std::size_t>& count,
                            const ChannelSets& exclude, std::uint64_t seed) {
  if (count.size() != widths.size() || (!exclude.empty() && exclude.size() != widths.size())) {
    throw_invalid("random_channels: layer count mismatch");
  }
  Rng rng(seed);
  ChannelSets out(widths.size());
  for (std::size_t l = 0; l < widths.size(); ++l) {
    std::vector<bool> skip(widths[l], false);
    if (!exclude.empty()) {
      for (std::size_t c : exclude[l]) {
        if (c < widths[l]) skip[c] = true;
      }
    }
    std::vector<std::size_t> pool;
    for (std::size_t c = 0; c < widths[l]; ++c) {
      if (!skip[c]) pool.push_back(c);
    }
    rng.shuffle(pool);
    pool.resize(std::min(count[l], pool.size()));
    std::sort(pool.begin(), pool.end());
    out[l] = std::move(pool);
  }
  return out;
}

HaloAblation conditional_halo_ablation(const TinyModel& model,
                                       const SupernodeSet& supernodes,
                                       const HaloSet& halos,
                                       const ChannelStats& stats,
                                       const EvalSet& set, std::size_t per_layer,
                                       std::size_t trials, std::uint64_t seed) {
  const auto widths = model.ffn_widths();
  const std::size_t layers = widths.size();
  if (halos.layers.size() != layers || supernodes.layers.size() != layers ||
      stats.widths() != widths) {
    throw_invalid("conditional_halo_ablation: inputs do not match the model");
  }
  if (trials == 0) throw_invalid("conditional_halo_ablation: need at least one trial");
  for (const auto& h : halos.layers) {
    if (per_layer > h.write_halo.size()) {
      throw_invalid("conditional_halo_ablation: n exceeds the halo size");
    }
  }
  constexpr std::size_t kDeciles = 10;
  HaloAblation out;
  out.per_layer = per_layer;
  if (per_layer == 0) {
    for (std::size_t t = 0; t < trials; ++t) {
      const std::uint64_t s = derive_seed(seed, t);
      for (ArmResult* arm : {&out.halo, &out.matched, &out.core}) {
        arm->delta.push_back(0.0);
        arm->seeds.push_back(s);
      }
    }
    return out;
  }

  std::vector<std::vector<std::size_t>> decile(layers);
  for (std::size_t l = 0; l < layers; ++l) decile[l] = rank_bins(stats.lp[l], kDeciles);

  const double core_delta = ablation_delta(model, set, {supernodes.layers}).front();
  const ChannelSets none(layers);
  const double clean = masked_perplexity(model, none, set).mean_nll;

  for (std::size_t t = 0; t < trials; ++t) {
    const std::uint64_t trial_seed = derive_seed(seed, t);
    Rng rng(trial_seed);
    ChannelSets halo_arm(layers), matched_arm(layers);
    std::vector<HaloAblation::Pair> pairs;
    for (std::size_t l = 0; l < layers; ++l) {
      std::vector<std::size_t> halo = halos.layers[l].write_halo;
      rng.shuffle(halo);
      halo.resize(per_layer);

      std::vector<bool> blocked(widths[l], false);
      for (std::size_t c : halos.layers[l].write_halo) blocked[c] = true;
      for (std::size_t c : supernodes.layers[l]) blocked[c] = true;
      std::vector<std::vector<std::size_t>> pool(kDeciles);
      for (std::size_t c = 0; c < widths[l]; ++c) {
        if (!blocked[c]) pool[decile[l][c]].push_back(c);
      }
      for (std::size_t h : halo) {
        const std::size_t want = decile[l][h];
        std::size_t got = kDeciles;
        for (std::size_t dist = 0; dist < kDeciles && got == kDeciles; ++dist) {
          if (want >= dist && !pool[want - dist].empty()) {
            got = want - dist;
          } else if (dist > 0 && want + dist < kDeciles && !pool[want + dist].empty()) {
            got = want + dist;
          }
        }
        if (got == kDeciles) {
          throw Error(ErrorKind::kInfeasible,
                      "conditional_halo_ablation: no non-halo channels left to match");
        }
        if (got != want) ++out.fallback_matches;
        auto& candidates = pool[got];
        const std::size_t pick = rng.below(candidates.size());
        const std::size_t matched = candidates[pick];
        candidates.erase(candidates.begin() + static_cast<std::ptrdiff_t>(pick));
        halo_arm[l].push_back(h);
        matched_arm[l].push_back(matched);
        pairs.push_back({l, h, matched, want, got});
      }
      std::sort(halo_arm[l].begin(), halo_arm[l].end());
      std::sort(matched_arm[l].begin(), matched_arm[l].end());
    }
    out.halo.delta.push_back(masked_perplexity(model, halo_arm, set).mean_nll - clean);
    out.matched.delta.push_back(masked_perplexity(model, matched_arm, set).mean_nll - clean);
    out.core.delta.push_back(core_delta);
    for (ArmResult* arm : {&out.halo, &out.matched, &out.core}) arm->seeds.push_back(trial_seed);
    out.pairs = std::move(pairs);
  }
  out.halo = finish_arm(std::move(out.halo));
  out.matched = finish_arm(std::move(out.matched));
  out.core = finish_arm(std::move(out.core));
  return out;
}

CriticalityResult supernode_criticality(const TinyModel& model,
                                        const SupernodeSet& supernodes,
                                        const EvalSet& set, std::size_t trials,
                                        std::uint64_t seed) {
  const auto widths = model.ffn_widths();
  if (supernodes.layers.size() != widths.size()) {
    throw_invalid("supernode_criticality: supernode set does not match the model");
  }
  const ChannelSets none(widths.size());
  const double clean = masked_perplexity(model, none, set).mean_nll;
  const double core = masked_perplexity(model, supernodes.layers, set).mean_nll - clean;
  CriticalityResult out;
  for (std::size_t t = 0; t < trials; ++t) {
    const std::uint64_t trial_seed = derive_seed(seed, t);
    const auto channels =
        random_channels(widths, counts_of(supernodes.layers), supernodes.layers, trial_seed);
    const double delta = masked_perplexity(model, channels, set).mean_nll - clean;
    out.core.delta.push_back(core);
    out.core.seeds.push_back(trial_seed);
    out.random.delta.push_back(delta);
    out.random.seeds.push_back(trial_seed);
    if (core > delta) ++out.wins;
  }
  out.core = finish_arm(std::move(out.core));
  out.random = finish_arm(std::move(out.random));
  return out;
}

CriticalityResult mean_replacement_experiment(const TinyModel& model,
                                              const SupernodeSet& supernodes,
                                              const ChannelStats& stats,
                                              const EvalSet& set,
                                              std::size_t trials,
                                              std::uint64_t seed) {
  const auto widths = model.ffn_widths();
  if (stats.act_mean.size() != widths.size()) {
    throw_invalid("mean_replacement_experiment: calibration means are missing");
  }
  if (stats.widths() != widths || supernodes.layers.size() != widths.size()) {
    throw_invalid("mean_replacement_experiment: inputs do not match the model");
  }
  auto means_for = [&](const ChannelSets& channels) {
    std::vector<std::vector<double>> means(channels.size());
    for (std::size_t l = 0; l < channels.size(); ++l) {
      for (std::size_t c : channels[l]) means[l].push_back(stats.act_mean[l][c]);
    }
    return means;
  };
  auto replaced_nll = [&](const ChannelSets& channels) {
    const auto means = means_for(channels);
    return evaluate(set, [&](std::span<const TokenId> t) {
             return mean_replace_forward(model, channels, means, t);
           }).mean_nll;
  };
  const ChannelSets none(widths.size());
  const double clean = masked_perplexity(model, none, set).mean_nll;
  const double core = replaced_nll(supernodes.layers) - clean;
  CriticalityResult out;
  for (std::size_t t = 0; t < trials; ++t) {
    const std::uint64_t trial_seed = derive_seed(seed, t);
    const auto channels =
        random_channels(widths, counts_of(supernodes.layers), supernodes.layers, trial_seed);
    const double delta = replaced_nll(channels) - clean;
    out.core.delta.push_back(core);
    out.core.seeds.push_back(trial_seed);
    out.random.delta.push_back(delta);
    out.random.seeds.push_back(trial_seed);
    if (core > delta) ++out.wins;
  }
  out.core = finish_arm(std::move(out.core));
  out.random = finish_arm(std::move(out.random));
  return out;
}

std::vector<EmergencePoint> emergence_track(const std::vector<Checkpoint>& checkpoints,
                                            const std::vector<TokenSequence>& windows,
                                            double fraction) {
  if (checkpoints.size() < 2) throw_invalid("emergence_track: need at least two checkpoints");
  const TinyModel& reference = checkpoints.back().model;
  for (const auto& c : checkpoints) {
    if (!(c.model.config == reference.config) ||
        c.model.ffn_widths() != reference.ffn_widths()) {
      throw_invalid("emergence_track: checkpoint at step " + std::to_string(c.step) +
                    " has an incompatible configuration");
    }
  }
  std::vector<ChannelStats> stats;
  for (const auto& c : checkpoints) stats.push_back(calibrate(c.model, windows).finalize());
  const SupernodeSet final_set = select_supernodes(stats.back(), fraction);

  std::vector<EmergencePoint> out;
  for (std::size_t k = 0; k < checkpoints.size(); ++k) {
    EmergencePoint p;
    p.step = checkpoints[k].step;
    std::vector<double> mass, ratio;
    for (const auto& v : top_rho_mass(stats[k], fraction)) mass.push_back(v.value_or(0.0));
    for (const auto& v : max_mean_ratio(stats[k])) ratio.push_back(v.value_or(0.0));
    p.median_top_mass = median(mass);
    p.median_max_mean = median(ratio);
    const SupernodeSet current = select_supernodes(stats[k], fraction);
    for (std::size_t l = 0; l < current.layers.size(); ++l) {
      p.jaccard.push_back(jaccard(current.layers[l], final_set.layers[l]));
    }
    p.median_jaccard = median(p.jaccard);
    out.push_back(std::move(p));
  }
  return out;
}

}  // namespace nodelens
