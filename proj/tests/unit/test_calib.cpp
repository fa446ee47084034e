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

#include <cmath>

#include "fixtures.hpp"
#include "oracles.hpp"
#include "nodelens/calib.hpp"

using namespace nodelens;
using namespace nodelens::testing;

namespace {

// One layer trace from explicit per-token (u, s) rows.
ChannelTrace trace_of(const std::vector<std::vector<double>>& u,
                      const std::vector<std::vector<double>>& s) {
  const auto T = static_cast<Index>(u.size());
  const auto m = static_cast<Index>(u.front().size());
  ChannelTrace tr;
  tr.u.emplace_back(T, m);
  tr.s.emplace_back(T, m);
  for (Index t = 0; t < T; ++t) {
    for (Index i = 0; i < m; ++i) {
      tr.u[0](t, i) = u[static_cast<std::size_t>(t)][static_cast<std::size_t>(i)];
      tr.s[0](t, i) = s[static_cast<std::size_t>(t)][static_cast<std::size_t>(i)];
    }
  }
  return tr;
}

ChannelTrace random_trace(std::size_t T, std::size_t m, std::uint64_t seed) {
  Rng r(seed);
  std::vector<std::vector<double>> u(T, std::vector<double>(m)), s = u;
  for (std::size_t t = 0; t < T; ++t) {
    for (std::size_t i = 0; i < m; ++i) {
      u[t][i] = 2.0 * r.uniform() - 1.0;
      s[t][i] = 2.0 * r.uniform() - 1.0;
    }
  }
  return trace_of(u, s);
}

void check_close(const std::vector<std::vector<double>>& a,
                 const std::vector<std::vector<double>>& b, double rel) {
  REQUIRE(a.size() == b.size());
  for (std::size_t l = 0; l < a.size(); ++l) {
    REQUIRE(a[l].size() == b[l].size());
    for (std::size_t i = 0; i < a[l].size(); ++i) CHECK(rel_diff(a[l][i], b[l][i]) <= rel);
  }
}

// q-series accumulator over one layer with core {0} and s = 1.
QCross qcross_of(const std::vector<std::vector<double>>& q_rows) {
  std::vector<std::vector<double>> ones(q_rows.size(),
                                        std::vector<double>(q_rows.front().size(), 1.0));
  QCrossAccumulator acc({q_rows.front().size()}, ChannelSets{{0}}, 0);
  acc.accumulate(trace_of(q_rows, ones));
  return acc.finalize();
}

std::vector<TokenSequence> windows_for(std::size_t count, std::size_t len, std::uint64_t seed) {
  std::vector<TokenSequence> out;
  for (std::size_t k = 0; k < count; ++k) out.push_back(random_tokens(len + 1, 11, seed + k));
  return out;
}

}  // namespace

TEST_SUITE("calib") {

TEST_CASE("accumulate examples") {
  StatsAccumulator acc({1}, 4, 0);
  acc.accumulate(trace_of({{2.0}}, {{3.0}}));
  CHECK(acc.lp_sums()[0][0] == 18.0);
  CHECK(acc.token_count() == 1);

  StatsAccumulator z({3}, 4, 0);
  z.accumulate(trace_of({{0, 0, 0}, {0, 0, 0}}, {{1, 2, 3}, {4, 5, 6}}));
  for (double v : z.lp_sums()[0]) CHECK(v == 0.0);
  for (double v : z.act_power_sums()[0]) CHECK(v == 0.0);
  CHECK(z.token_count() == 2);

  StatsAccumulator two({1}, 4, 0);
  two.accumulate(trace_of({{1.0}, {3.0}}, {{1.0}, {1.0}}));
  const ChannelStats st = two.finalize();
  CHECK(st.lp[0][0] == 0.5 * (1.0 + 9.0) / 2.0);
  CHECK(st.act_power[0][0] == 5.0);
  CHECK(st.curvature[0][0] == 1.0);
}

TEST_CASE("finalize examples") {
  StatsAccumulator acc({2}, 4, 0);
  std::vector<std::vector<double>> ones(10, std::vector<double>(2, 1.0));
  acc.accumulate(trace_of(ones, ones));
  const ChannelStats st = acc.finalize();
  for (int i = 0; i < 2; ++i) {
    CHECK(st.lp[0][i] == 0.5);
    CHECK(st.act_power[0][i] == 1.0);
    CHECK(st.curvature[0][i] == 1.0);
  }
  CHECK(st.token_count == 10);
  CHECK_THROWS_AS(StatsAccumulator({2}, 4, 0).finalize(), Error);
}

TEST_CASE("lp does not depend on token order") {
  std::vector<std::vector<double>> u{{1, 2}, {-3, 0.5}, {0.25, 4}}, s{{2, 1}, {1, -1}, {3, 0.5}};
  StatsAccumulator a({2}, 4, 0), b({2}, 4, 0);
  a.accumulate(trace_of(u, s));
  std::swap(u[0], u[2]);
  std::swap(s[0], s[2]);
  b.accumulate(trace_of(u, s));
  check_close(a.finalize().lp, b.finalize().lp, 1e-15);
}

TEST_CASE("shape mismatches are rejected") {
  StatsAccumulator acc({3}, 4, 0);
  CHECK_THROWS_AS(acc.accumulate(random_trace(2, 4, 1)), Error);
  StatsAccumulator other({3}, 4, 99);
  other.accumulate(random_trace(2, 3, 1));
  acc.accumulate(random_trace(2, 3, 2));
  CHECK_THROWS_AS(acc.merge(other), Error);
}

TEST_CASE("merge identity, single-pass equivalence and associativity") {
  const ChannelTrace ta = random_trace(5, 6, 1), tb = random_trace(7, 6, 2),
                     tc = random_trace(3, 6, 3);
  StatsAccumulator a({6}, 4, 7), b({6}, 4, 7), c({6}, 4, 7), all({6}, 4, 7);
  a.accumulate(ta);
  b.accumulate(tb);
  c.accumulate(tc);
  all.accumulate(ta);
  all.accumulate(tb);
  all.accumulate(tc);

  const ChannelStats x = merge(a, StatsAccumulator{}).finalize();
  const ChannelStats ax = a.finalize();
  CHECK(x.lp == ax.lp);
  CHECK(x.token_count == ax.token_count);
  CHECK(merge(StatsAccumulator{}, a).finalize().lp == ax.lp);

  const ChannelStats left = merge(merge(a, b), c).finalize();
  const ChannelStats right = merge(a, merge(b, c)).finalize();
  const ChannelStats single = all.finalize();
  check_close(left.lp, single.lp, 1e-12);
  check_close(left.act_power, single.act_power, 1e-12);
  check_close(left.curvature, single.curvature, 1e-12);
  check_close(left.lp, right.lp, 1e-12);
  CHECK(left.token_count == 15);
}

TEST_CASE("streaming lp equals per-token enumeration on a model") {
  TinyModel m = init_model(small_config(1));
  jitter(m, 5);
  const auto windows = windows_for(6, 10, 40);
  const std::size_t saved = worker_count();
  set_worker_count(3);
  const ChannelStats st = calibrate(m, windows).finalize();
  set_worker_count(saved);
  check_close(st.lp, enumerate_lp(m, windows), 1e-12);
  CHECK(st.token_count == 60);
  CHECK(st.fingerprint == fingerprint(m));
}

TEST_CASE("sharding does not change the statistics") {
  TinyModel m = init_model(small_config(2));
  jitter(m, 6);
  const auto windows = windows_for(7, 9, 70);
  const std::size_t saved = worker_count();
  set_worker_count(1);
  const ChannelStats one = calibrate(m, windows).finalize();
  for (std::size_t w : {2u, 3u, 7u}) {
    set_worker_count(w);
    const ChannelStats many = calibrate(m, windows).finalize();
    check_close(many.lp, one.lp, 1e-12);
    check_close(many.act_power, one.act_power, 1e-12);
    check_close(many.curvature, one.curvature, 1e-12);
  }
  set_worker_count(saved);
  // A manual split into uneven shards, merged in order.
  StatsAccumulator a = calibrate(m, {windows.begin(), windows.begin() + 2});
  StatsAccumulator b = calibrate(m, {windows.begin() + 2, windows.end()});
  check_close(merge(a, b).finalize().lp, one.lp, 1e-12);
}

TEST_CASE("scaling the loss scales lp and curvature by c^2") {
  TinyModel m = init_model(small_config(3));
  jitter(m, 7);
  const TokenSequence seq = random_tokens(12, 11, 8);
  const TokenSequence in(seq.begin(), seq.end() - 1), tg(seq.begin() + 1, seq.end());
  const ForwardResult fr = forward(m, in);
  StatsAccumulator a = StatsAccumulator::for_model(m), b = StatsAccumulator::for_model(m);
  a.accumulate(backward_capture(m, fr.cache, tg, 1.0).trace);
  b.accumulate(backward_capture(m, fr.cache, tg, 2.5).trace);
  const ChannelStats sa = a.finalize(), sb = b.finalize();
  for (std::size_t l = 0; l < 2; ++l) {
    for (std::size_t i = 0; i < 16; ++i) {
      CHECK(rel_diff(sb.lp[l][i], 6.25 * sa.lp[l][i]) <= 1e-12);
      CHECK(rel_diff(sb.curvature[l][i], 6.25 * sa.curvature[l][i]) <= 1e-12);
      CHECK(sb.act_power[l][i] == sa.act_power[l][i]);
      CHECK(sa.lp[l][i] >= 0.0);
    }
  }
}

TEST_CASE("optional moments: channel means and input power") {
  TinyModel m = init_model(small_config(4));
  jitter(m, 8);
  const auto windows = windows_for(2, 8, 90);
  const ChannelStats st = calibrate(m, windows).finalize();
  REQUIRE(st.act_mean.size() == 2);
  REQUIRE(st.input_power.size() == 2);
  double mean0 = 0.0, h2 = 0.0;
  for (const auto& w : windows) {
    const ForwardResult fr = forward(m, TokenSequence(w.begin(), w.end() - 1));
    mean0 += fr.cache.layers[1].u.col(3).sum();
    h2 += fr.cache.layers[0].h.col(5).squaredNorm();
  }
  CHECK(rel_diff(st.act_mean[1][3], mean0 / 16.0) <= 1e-12);
  CHECK(rel_diff(st.input_power[0][5], h2 / 16.0) <= 1e-12);
  CHECK_NOTHROW(st.validate());
}

TEST_CASE("q cross statistics: self, sign flip and affine maps") {
  std::vector<std::vector<double>> rows;
  Rng r(11);
  for (int t = 0; t < 50; ++t) {
    const double c = 2.0 * r.uniform() - 1.0;
    rows.push_back({c, -c, 2.0 * c + 1.0, 0.7});
  }
  const QCross q = qcross_of(rows);
  CHECK(pearson(q, 0, 0, 0).value == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(pearson(q, 0, 1, 0).value == doctest::Approx(-1.0).epsilon(1e-12));
  CHECK(pearson(q, 0, 2, 0).value == doctest::Approx(1.0).epsilon(1e-12));
  const Correlation flat = pearson(q, 0, 3, 0);
  CHECK(flat.value == 0.0);
  CHECK(flat.degenerate);
  CHECK_THROWS_AS(pearson(q, 0, 1, 1), Error);
}

TEST_CASE("independent q streams are nearly uncorrelated") {
  std::vector<std::vector<double>> rows;
  Rng r(12);
  for (int t = 0; t < 1000; ++t) rows.push_back({r.uniform() - 0.5, r.uniform() - 0.5});
  const QCross q = qcross_of(rows);
  CHECK(std::abs(pearson(q, 0, 1, 0).value) < 0.15);
}

TEST_CASE("hand-computed four-token correlation") {
  const double a[4] = {1.0, 2.0, 4.0, -1.0};
  const double b[4] = {0.5, 1.0, 0.0, 2.0};
  std::vector<std::vector<double>> rows;
  for (int t = 0; t < 4; ++t) rows.push_back({a[t], b[t]});
  const QCross q = qcross_of(rows);
  // mean a = 1.5, mean b = 0.875; centered sums by hand.
  const double sab = (-0.5 * -0.375) + (0.5 * 0.125) + (2.5 * -0.875) + (-2.5 * 1.125);
  const double saa = 0.25 + 0.25 + 6.25 + 6.25;
  const double sbb = 0.140625 + 0.015625 + 0.765625 + 1.265625;
  const double want = sab / std::sqrt(saa * sbb);
  CHECK(std::abs(pearson(q, 0, 1, 0).value - want) <= 1e-14);
}

TEST_CASE("q cross merge matches a single pass") {
  const ChannelTrace t1 = random_trace(6, 4, 21), t2 = random_trace(9, 4, 22);
  QCrossAccumulator a({4}, ChannelSets{{1, 3}}, 0), b = a, all = a;
  a.accumulate(t1);
  b.accumulate(t2);
  all.accumulate(t1);
  all.accumulate(t2);
  a.merge(b);
  const QCross x = a.finalize(), y = all.finalize();
  CHECK(x.token_count == 15);
  for (std::size_t j = 0; j < 4; ++j) {
    CHECK(std::abs(pearson(x, 0, j, 3).value - pearson(y, 0, j, 3).value) <= 1e-12);
  }
  CHECK_THROWS_AS(QCrossAccumulator({4}, ChannelSets{{}}, 0), Error);
  CHECK_THROWS_AS(QCrossAccumulator({4}, ChannelSets{{4}}, 0), Error);
}

TEST_CASE("calibration windows are deterministic and in range") {
  const TokenSequence corpus = random_tokens(200, 11, 1);
  const auto a = calibration_windows(corpus, 5, 16, 3);
  const auto b = calibration_windows(corpus, 5, 16, 3);
  CHECK(a == b);
  for (const auto& w : a) CHECK(w.size() == 17);
  CHECK_THROWS_AS(calibration_windows(corpus, 1, 200, 3), Error);
}

}
