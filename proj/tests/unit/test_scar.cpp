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
#include <set>

#include "fixtures.hpp"
#include "oracles.hpp"
#include "nodelens/analysis.hpp"
#include "nodelens/scar.hpp"

using namespace nodelens;
using namespace nodelens::testing;

namespace {

ChannelStats stats_with_lp(const LayerScores& lp) {
  ChannelStats s;
  s.lp = lp;
  s.act_power = lp;
  s.curvature = lp;
  s.token_count = 1;
  return s;
}

LayerScores random_scores(const std::vector<std::size_t>& widths, std::uint64_t seed) {
  Rng r(seed);
  LayerScores out;
  for (auto m : widths) {
    std::vector<double> v(m);
    for (auto& x : v) x = r.uniform();
    out.push_back(v);
  }
  return out;
}

SupernodeSet core_of(ChannelSets layers) {
  SupernodeSet s;
  s.layers = std::move(layers);
  return s;
}

std::size_t overlap(const ChannelSets& a, const ChannelSets& b) {
  std::size_t n = 0;
  for (std::size_t l = 0; l < a.size(); ++l) {
    for (auto x : a[l]) n += std::count(b[l].begin(), b[l].end(), x);
  }
  return n;
}

}  // namespace

TEST_SUITE("scar") {

TEST_CASE("SCAR score formulas collapse as expected") {
  const LayerScores lp = random_scores({6, 6}, 1);
  const ChannelStats st = stats_with_lp(lp);
  const LayerScores ones(2, std::vector<double>(6, 1.0));
  const LayerScores zeros(2, std::vector<double>(6, 0.0));
  const LayerScores protect = random_scores({6, 6}, 2);
  CHECK(scar_scores(ScarVariant::kLp, st, nullptr, nullptr) == lp);
  CHECK(scar_scores(ScarVariant::kProt, st, &ones, nullptr) == lp);
  CHECK(scar_scores(ScarVariant::kConn, st, &protect, &zeros) == lp);
  const LayerScores c1 = scar_scores(ScarVariant::kConn, st, &protect, &ones);
  const LayerScores p = scar_scores(ScarVariant::kProt, st, &protect, nullptr);
  for (std::size_t l = 0; l < 2; ++l) {
    for (std::size_t i = 0; i < 6; ++i) {
      CHECK(c1[l][i] == lp[l][i] * protect[l][i]);
      CHECK(p[l][i] == lp[l][i] * protect[l][i]);
    }
  }
  CHECK_THROWS_AS(scar_scores(ScarVariant::kProt, st, nullptr, nullptr), Error);
  CHECK_THROWS_AS(scar_scores(ScarVariant::kConn, st, &protect, nullptr), Error);
}

TEST_CASE("names parse and print") {
  CHECK(parse_variant("prot") == ScarVariant::kProt);
  CHECK(to_string(ScarVariant::kConn) == "conn");
  CHECK(parse_baseline("act-l2") == BaselineMethod::kActL2);
  CHECK(parse_baseline("act_l2") == BaselineMethod::kActL2);
  CHECK_THROWS_AS(parse_variant("nope"), Error);
  CHECK_THROWS_AS(parse_baseline("sparsegpt"), Error);
}

TEST_CASE("baseline scores") {
  TinyModel m = init_model(small_config(3));
  jitter(m, 4);
  SUBCASE("magnitude") {
    const TinyModel z = zeros_like(m);
    for (const auto& l : baseline_scores(BaselineMethod::kMagnitude, z, nullptr, 0)) {
      for (double x : l) CHECK(x == 0.0);
    }
    const auto s = baseline_scores(BaselineMethod::kMagnitude, m, nullptr, 0);
    double sq = 0.0;
    for (Index c = 0; c < 8; ++c) {
      sq += m.layers[1].w_up(5, c) * m.layers[1].w_up(5, c) +
            m.layers[1].w_gate(5, c) * m.layers[1].w_gate(5, c) +
            m.layers[1].w_down(c, 5) * m.layers[1].w_down(c, 5);
    }
    CHECK(s[1][5] == doctest::Approx(std::sqrt(sq)).epsilon(1e-14));
  }
  SUBCASE("wanda with unit statistics is the group L1 norm") {
    ChannelStats st = stats_with_lp(LayerScores(2, std::vector<double>(16, 1.0)));
    st.input_power = LayerScores(2, std::vector<double>(8, 1.0));
    const auto s = baseline_scores(BaselineMethod::kWanda, m, &st, 0);
    for (std::size_t l = 0; l < 2; ++l) {
      for (Index i = 0; i < 16; ++i) {
        const auto& w = m.layers[l];
        const double l1 = w.w_up.row(i).cwiseAbs().sum() + w.w_gate.row(i).cwiseAbs().sum() +
                          w.w_down.col(i).cwiseAbs().sum();
        CHECK(s[l][static_cast<std::size_t>(i)] == doctest::Approx(l1).epsilon(1e-14));
      }
    }
    CHECK_THROWS_AS(baseline_scores(BaselineMethod::kWanda, m, nullptr, 0), Error);
  }
  SUBCASE("act_l2 and random") {
    ChannelStats st = stats_with_lp(random_scores({16, 16}, 9));
    const auto a = baseline_scores(BaselineMethod::kActL2, m, &st, 0);
    CHECK(a[0][3] == std::sqrt(st.act_power[0][3]));
    CHECK(baseline_scores(BaselineMethod::kRandom, m, nullptr, 5) ==
          baseline_scores(BaselineMethod::kRandom, m, nullptr, 5));
    CHECK(baseline_scores(BaselineMethod::kRandom, m, nullptr, 5) !=
          baseline_scores(BaselineMethod::kRandom, m, nullptr, 6));
  }
}

TEST_CASE("budget and cap arithmetic") {
  CHECK(prune_budget(10, 0.3) == 3);
  CHECK(prune_budget(100, 0.29) == 29);
  CHECK(prune_budget(1024, 0.5) == 512);
  CHECK(prune_budget(7, 0.5) == 3);
  CHECK(cap_limit(4, 0.25) == 1);
  CHECK(cap_limit(256, 0.7) == 179);
  CHECK(cap_limit(10, 0.7) == 7);
  CHECK(cap_limit(3, 1.0) == 3);
  CHECK_THROWS_AS(prune_budget(10, 0.0), Error);
  CHECK_THROWS_AS(prune_budget(10, 1.0), Error);
}

TEST_CASE("select_mask examples") {
  const LayerScores scores{{0.8, 0.1, 0.5, 0.3}, {0.2, 0.9, 0.05, 0.7}};
  const std::vector<double> full{1.0};
  const PruneMask a = select_mask(scores, {}, 0.5, full);
  CHECK(a.pruned == ChannelSets{{1, 3}, {0, 2}});
  CHECK(a.total_pruned() == 4);
  CHECK(enumerate_selection(scores, {}, 0.5, full) == a.pruned);

  const std::vector<double> capped{0.25, 1.0};
  const LayerScores low0{{0.1, 0.2, 0.3, 0.4}, {0.5, 0.6, 0.7, 0.8}};
  const PruneMask b = select_mask(low0, {}, 0.5, capped);
  CHECK(b.pruned[0].size() == 1);
  CHECK(b.pruned == ChannelSets{{0}, {0, 1, 2}});

  const std::vector<double> tight{0.25};
  CHECK_THROWS_AS(select_mask(low0, {}, 0.5, tight), Error);
  try {
    select_mask(low0, {}, 0.5, tight);
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::kInfeasible);
  }
  const ChannelSets heavy{{0, 1, 2}, {0, 1, 2}};
  CHECK_THROWS_AS(select_mask(low0, heavy, 0.5, full), Error);
}

TEST_CASE("select_mask equals exhaustive enumeration") {
  for (std::uint64_t seed = 0; seed < 150; ++seed) {
    const SelectionInstance in = random_selection_instance(seed);
    const auto want = enumerate_selection(in.scores, in.protected_set, in.sparsity, in.caps);
    if (!want) {
      CHECK_THROWS_AS(select_mask(in.scores, in.protected_set, in.sparsity, in.caps), Error);
      continue;
    }
    const PruneMask got = select_mask(in.scores, in.protected_set, in.sparsity, in.caps);
    INFO("seed " << seed);
    CHECK(got.pruned == *want);
  }
}

TEST_CASE("selection depends only on score order") {
  const LayerScores s = random_scores({20, 30, 25}, 7);
  LayerScores t = s;
  for (auto& l : t) {
    for (auto& x : l) x = std::exp(5.0 * x) - 2.0;
  }
  const std::vector<double> caps{0.7};
  CHECK(select_mask(s, {}, 0.4, caps).pruned == select_mask(t, {}, 0.4, caps).pruned);
}

TEST_CASE("protected channels are never pruned and the budget is exact") {
  const std::vector<std::size_t> widths{64, 64, 64};
  const LayerScores lp = random_scores(widths, 11);
  const SupernodeSet core = select_supernodes(stats_with_lp(lp), 0.05);
  const std::vector<double> caps{0.75};
  for (double s : {0.3, 0.5, 0.7}) {
    // Protected channels get the lowest scores so greedy would pick them first.
    LayerScores adversarial = lp;
    for (std::size_t l = 0; l < 3; ++l) {
      for (auto c : core.layers[l]) adversarial[l][c] = -1.0;
    }
    const PruneMask m = select_mask(adversarial, core.layers, s, caps);
    CHECK(hit_rate(m.pruned, core) == 0.0);
    CHECK(m.total_pruned() == prune_budget(192, s));
    for (std::size_t l = 0; l < 3; ++l) CHECK(m.pruned[l].size() <= cap_limit(64, 0.75));
  }
}

TEST_CASE("hit rate") {
  const SupernodeSet core = core_of({{1, 4}, {0}});
  CHECK(hit_rate(ChannelSets{{1, 4}, {0}}, core) == 1.0);
  CHECK(hit_rate(ChannelSets{{2, 3}, {5}}, core) == 0.0);
  CHECK(hit_rate(ChannelSets{{4, 9}, {}}, core) == doctest::Approx(1.0 / 3.0));
  CHECK_THROWS_AS(hit_rate(ChannelSets{{}, {}}, core_of({{}, {}})), Error);
}

TEST_CASE("forced-hit masks") {
  const std::vector<std::size_t> widths{40, 40};
  const SupernodeSet core = core_of({{0, 5, 9, 20}, {3, 7, 11, 30}});
  const std::vector<double> caps{0.7};
  const std::size_t budget = prune_budget(80, 0.5);
  for (double f : {0.0, 0.25, 0.5, 1.0}) {
    const PruneMask m = forced_hit_mask(core, widths, f, 0.5, caps, 17);
    CHECK(m.total_pruned() == budget);
    CHECK(overlap(m.pruned, core.layers) == static_cast<std::size_t>(std::llround(f * 8)));
    CHECK(*m.hit_rate == doctest::Approx(f));
    for (const auto& l : m.pruned) {
      CHECK(l.size() <= cap_limit(40, 0.7));
      CHECK(std::set<std::size_t>(l.begin(), l.end()).size() == l.size());
      CHECK(std::is_sorted(l.begin(), l.end()));
    }
  }
  CHECK(forced_hit_mask(core, widths, 0.25, 0.5, caps, 17).pruned ==
        forced_hit_mask(core, widths, 0.25, 0.5, caps, 17).pruned);
  CHECK(forced_hit_mask(core, widths, 0.25, 0.5, caps, 17).pruned !=
        forced_hit_mask(core, widths, 0.25, 0.5, caps, 18).pruned);
  // Too many forced hits for the budget.
  const SupernodeSet big = core_of({{0, 1, 2, 3, 4, 5}, {0, 1, 2, 3, 4, 5}});
  CHECK_THROWS_AS(forced_hit_mask(big, {8, 8}, 1.0, 0.5, std::vector<double>{1.0}, 1), Error);
  CHECK_THROWS_AS(forced_hit_mask(core, widths, 1.5, 0.5, caps, 1), Error);
}

TEST_CASE("random protected set mirrors the per-layer counts") {
  const SupernodeSet core = core_of({{1, 2, 3}, {4}});
  const ChannelSets r = random_protected_set({20, 10}, core, 4);
  CHECK(r[0].size() == 3);
  CHECK(r[1].size() == 1);
  CHECK(std::is_sorted(r[0].begin(), r[0].end()));
  CHECK(r == random_protected_set({20, 10}, core, 4));
}

}
