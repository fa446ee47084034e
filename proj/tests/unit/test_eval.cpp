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

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "fixtures.hpp"
#include "nodelens/analysis.hpp"
#include "nodelens/calib.hpp"
#include "nodelens/eval.hpp"
#include "nodelens/halo.hpp"
#include "nodelens/scar.hpp"
#include "nodelens/train.hpp"

using namespace nodelens;
using namespace nodelens::testing;

namespace {

TinyModel model_for(std::uint64_t seed, std::size_t layers = 2) {
  ModelConfig c = small_config(seed);
  c.n_layers = layers;
  TinyModel m = init_model(c);
  jitter(m, seed + 50);
  return m;
}

std::size_t in_sets(const ChannelSets& a, const ChannelSets& b) {
  std::size_t n = 0;
  for (std::size_t l = 0; l < a.size(); ++l) {
    for (auto x : a[l]) n += std::count(b[l].begin(), b[l].end(), x);
  }
  return n;
}

}  // namespace

TEST_SUITE("eval") {

TEST_CASE("eval blocks share boundary tokens and drop the tail") {
  TokenSequence corpus(23);
  std::iota(corpus.begin(), corpus.end(), 0);
  const EvalSet set = make_eval_set(corpus, 5);
  REQUIRE(set.blocks.size() == 4);
  CHECK(set.tokens() == 20);
  CHECK(set.blocks[0] == TokenSequence{0, 1, 2, 3, 4, 5});
  CHECK(set.blocks[1].front() == 5);
  CHECK(set.blocks[3].back() == 20);
  CHECK(make_eval_set(corpus, 5, 10).blocks.size() == 2);
  CHECK(make_eval_set(corpus, 5, 3).blocks.size() == 1);
  CHECK_THROWS_AS(make_eval_set(corpus, 23), Error);
}

TEST_CASE("uniform model has perplexity V") {
  const TinyModel z = zeros_like(model_for(1));
  const NllSummary s = blockwise_perplexity(z, random_tokens(100, 11, 1), 8);
  CHECK(std::abs(s.perplexity - 11.0) <= 1e-12 * 11.0);
}

TEST_CASE("single block equals exp(nll_loss) and evaluation is repeatable") {
  const TinyModel m = model_for(2);
  const TokenSequence corpus = random_tokens(13, 11, 2);
  const NllSummary s = blockwise_perplexity(m, corpus, 12);
  const TokenSequence in(corpus.begin(), corpus.end() - 1), tg(corpus.begin() + 1, corpus.end());
  const double want = nll_loss(forward_logits(m, in), tg);
  CHECK(std::abs(s.mean_nll - want) <= 1e-14 * want);
  CHECK(rel_diff(s.perplexity, std::exp(want)) <= 1e-12);
  const TokenSequence longer = random_tokens(200, 11, 3);
  const NllSummary a = blockwise_perplexity(m, longer, 9);
  const NllSummary b = blockwise_perplexity(m, longer, 9);
  CHECK(a.mean_nll == b.mean_nll);
  CHECK(rel_diff(a.perplexity, std::exp(a.mean_nll)) <= 1e-12);
}

TEST_CASE("ablation deltas") {
  ModelConfig c = small_config(3);
  c.n_layers = 1;
  TinyModel m = init_model(c);
  jitter(m, 30);
  const EvalSet set = make_eval_set(random_tokens(60, 11, 4), 9);
  CHECK(ablation_delta(m, set, {ChannelSets(1)}).front() == 0.0);

  TinyModel zeroed = m;
  zeroed.layers[0].w_down.col(6).setZero();
  const double want = model_perplexity(zeroed, set).mean_nll - model_perplexity(m, set).mean_nll;
  CHECK(std::abs(ablation_delta(m, set, {ChannelSets{{6}}}).front() - want) <= 1e-12);
}

TEST_CASE("single channel deltas match full masked evaluation") {
  const TinyModel m = model_for(4);
  const EvalSet set = make_eval_set(random_tokens(40, 11, 5), 8);
  const auto d = single_channel_deltas(m, set);
  REQUIRE(d.size() == 2);
  for (std::size_t l = 0; l < 2; ++l) {
    REQUIRE(d[l].size() == 16);
    for (std::size_t i : {0u, 7u, 15u}) {
      ChannelSets mask(2);
      mask[l] = {i};
      CHECK(std::abs(d[l][i] - ablation_delta(m, set, {mask}).front()) <= 1e-12);
    }
  }
}

TEST_CASE("masked and removed perplexities agree") {
  const TinyModel m = model_for(5);
  const EvalSet set = make_eval_set(random_tokens(80, 11, 6), 10);
  const ChannelSets mask{{1, 4, 9}, {0, 2, 3, 15}};
  const double a = masked_perplexity(m, mask, set).perplexity;
  const double b = model_perplexity(remove_channels(m, mask), set).perplexity;
  CHECK(rel_diff(a, b) <= 1e-8);
}

TEST_CASE("LP validation bins") {
  SUBCASE("one channel carries the output") {
    TinyModel m = model_for(6);
    for (auto& l : m.layers) {
      const Vector keep = l.w_down.col(3);
      l.w_down.setZero();
      l.w_down.col(3) = 4.0 * keep;
    }
    const auto windows = calibration_windows(random_tokens(200, 11, 7), 6, 12, 1);
    const ChannelStats st = calibrate(m, windows).finalize();
    const EvalSet set = make_eval_set(random_tokens(60, 11, 8), 10);
    const LpValidation v = lp_validation_bins(m, st, set, 10);
    REQUIRE(v.bin_mean.size() == 10);
    // Every other channel writes nothing, so its delta is exactly zero.
    const double top = std::abs(v.bin_mean.back());
    CHECK(top > 0.0);
    for (std::size_t b = 0; b + 1 < 10; ++b) CHECK(v.bin_mean[b] == 0.0);
    CHECK(v.spearman.value >= -1.0);
    CHECK(v.spearman.value <= 1.0);
    CHECK(*std::max_element(v.bin_count.begin(), v.bin_count.end()) -
              *std::min_element(v.bin_count.begin(), v.bin_count.end()) <= 2);
  }
  SUBCASE("bins from precomputed deltas") {
    ChannelStats st;
    st.lp = {std::vector<double>(23)};
    std::iota(st.lp[0].begin(), st.lp[0].end(), 1.0);
    st.act_power = st.curvature = st.lp;
    st.token_count = 1;
    std::vector<std::vector<double>> deltas = st.lp;
    const LpValidation v = lp_validation_from_deltas(st, deltas, 10);
    CHECK(v.spearman.value == doctest::Approx(1.0));
    CHECK(*std::max_element(v.bin_count.begin(), v.bin_count.end()) -
              *std::min_element(v.bin_count.begin(), v.bin_count.end()) <= 1);
    // max/mean = 23/12 sits under the threshold of 2.
    CHECK(v.weak_signal);
  }
}

TEST_CASE("dose response keeps the budget fixed") {
  const TinyModel m = model_for(7);
  const EvalSet set = make_eval_set(random_tokens(60, 11, 9), 10);
  SupernodeSet core;
  core.layers = {{2, 9}, {5, 12}};
  const std::vector<double> fractions{0.0, 0.25, 0.5, 1.0};
  const std::vector<double> caps{0.7};
  const SweepCurve c = dose_response(m, core, set, 0.5, fractions, 3, caps, 11);
  REQUIRE(c.points.size() == 4);
  for (const auto& p : c.points) {
    CHECK(p.pruned == 16);
    CHECK(p.values.size() == 3);
    for (double h : p.hit_rates) CHECK(h == doctest::Approx(p.x));
    double mean = std::accumulate(p.values.begin(), p.values.end(), 0.0) / 3.0;
    CHECK(rel_diff(p.mean, mean) <= 1e-14);
  }
  CHECK(c.points[0].seeds == c.points[3].seeds);
  // The f = 0 arm is a plain random mask that avoids the supernodes.
  const PruneMask m0 = forced_hit_mask(core, m.ffn_widths(), 0.0, 0.5, caps, c.points[0].seeds[0]);
  CHECK(in_sets(m0.pruned, core.layers) == 0);
  CHECK(c.points[0].values[0] == masked_perplexity(m, m0.pruned, set).perplexity);
}

TEST_CASE("random channels avoid the exclusion set") {
  const ChannelSets exclude{{0, 1, 2}, {}};
  const ChannelSets r = random_channels({5, 6}, {4, 2}, exclude, 3);
  CHECK(r[0].size() == 2);
  CHECK(r[1].size() == 2);
  CHECK(in_sets(r, exclude) == 0);
}

TEST_CASE("conditional halo ablation") {
  const TinyModel m = model_for(8);
  const auto windows = calibration_windows(random_tokens(200, 11, 10), 6, 12, 2);
  const ChannelStats st = calibrate(m, windows).finalize();
  const SupernodeSet core = select_supernodes(st, 0.1);
  HaloOptions o;
  o.support_size = 3;
  o.eta = 0.3;
  const HaloSet halos = build_halo(m, core, o);
  const EvalSet set = make_eval_set(random_tokens(60, 11, 11), 10);

  const HaloAblation zero = conditional_halo_ablation(m, core, halos, st, set, 0, 3, 1);
  for (const ArmResult* a : {&zero.halo, &zero.matched, &zero.core}) {
    CHECK(a->delta.size() == 3);
    for (double d : a->delta) CHECK(d == 0.0);
  }
  const HaloAblation h = conditional_halo_ablation(m, core, halos, st, set, 2, 3, 1);
  CHECK(h.halo.delta.size() == 3);
  CHECK(h.core.mean == ablation_delta(m, set, {core.layers}).front());
  std::size_t off = 0;
  for (const auto& p : h.pairs) {
    if (p.halo_decile != p.matched_decile) ++off;
    const auto& hl = halos.layers[p.layer].write_halo;
    CHECK(std::find(hl.begin(), hl.end(), p.halo_channel) != hl.end());
    CHECK(std::find(hl.begin(), hl.end(), p.matched_channel) == hl.end());
    const auto bins = rank_bins(st.lp[p.layer], 10);
    CHECK(bins[p.halo_channel] == p.halo_decile);
    CHECK(bins[p.matched_channel] == p.matched_decile);
  }
  CHECK(off <= h.fallback_matches);
  CHECK_THROWS_AS(conditional_halo_ablation(m, core, halos, st, set, 99, 1, 1), Error);
}

TEST_CASE("criticality and mean replacement arms") {
  TinyModel m = model_for(9);
  // Channel 4 of layer 0 is dead, so its activation is the constant 0.
  m.layers[0].w_gate.row(4).setZero();
  m.layers[0].w_up.row(4).setZero();
  const auto windows = calibration_windows(random_tokens(200, 11, 12), 6, 12, 3);
  const ChannelStats st = calibrate(m, windows).finalize();
  const EvalSet set = make_eval_set(random_tokens(60, 11, 13), 10);

  SupernodeSet dead;
  dead.layers = {{4}, {}};
  const CriticalityResult mr = mean_replacement_experiment(m, dead, st, set, 3, 5);
  CHECK(mr.core.mean == 0.0);

  const SupernodeSet core = select_supernodes(st, 0.1);
  const CriticalityResult zr = supernode_criticality(m, core, set, 4, 7);
  CHECK(zr.core.delta.size() == 4);
  CHECK(zr.random.delta.size() == 4);
  CHECK(zr.core.seeds == zr.random.seeds);
  std::size_t wins = 0;
  for (std::size_t t = 0; t < 4; ++t) wins += zr.core.delta[t] > zr.random.delta[t];
  CHECK(wins == zr.wins);
  ChannelStats no_means = st;
  no_means.act_mean.clear();
  CHECK_THROWS_AS(mean_replacement_experiment(m, core, no_means, set, 1, 1), Error);
}

TEST_CASE("emergence trajectory") {
  ModelConfig c = small_config(10);
  const TinyModel m0 = init_model(c);
  const TokenSequence corpus = random_tokens(400, 11, 14);
  TrainOptions o;
  o.steps = 30;
  o.checkpoint_every = 10;
  o.batch_size = 2;
  o.seq_len = 12;
  o.learning_rate = 1e-2;
  const TrainResult r = train_toy(m0, corpus, o);
  const auto windows = calibration_windows(corpus, 4, 12, 5);
  const auto track = emergence_track(r.checkpoints, windows, 0.1);
  REQUIRE(track.size() == r.checkpoints.size());
  CHECK(track.back().step == 30);
  for (double j : track.back().jaccard) CHECK(j == 1.0);
  CHECK(track.back().median_jaccard == 1.0);
  for (const auto& p : track) {
    CHECK(p.median_top_mass > 0.0);
    CHECK(p.median_top_mass <= 1.0);
    CHECK(p.median_max_mean >= 1.0);
  }
  CHECK_THROWS_AS(emergence_track({r.checkpoints.front()}, windows, 0.1), Error);
  std::vector<Checkpoint> mixed = r.checkpoints;
  ModelConfig other = c;
  other.m_ffn = 8;
  mixed.front().model = init_model(other);
  CHECK_THROWS_AS(emergence_track(mixed, windows, 0.1), Error);
}

}
