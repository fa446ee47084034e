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

#include "fixtures.hpp"
#include "nodelens/calib.hpp"
#include "nodelens/halo.hpp"
#include "nodelens/redundancy.hpp"

using namespace nodelens;
using namespace nodelens::testing;

namespace {

// One layer of q series: column c of `q` is channel c; s is fixed at 1.
QCross qcross_from(const Matrix& q, const ChannelSets& core) {
  ChannelTrace tr;
  tr.u.push_back(q);
  tr.s.push_back(Matrix::Ones(q.rows(), q.cols()));
  QCrossAccumulator acc({static_cast<std::size_t>(q.cols())}, core, 0);
  acc.accumulate(tr);
  return acc.finalize();
}

Matrix correlated_series(std::size_t T, std::uint64_t seed) {
  Rng r(seed);
  Matrix q(static_cast<Index>(T), 6);
  for (Index t = 0; t < q.rows(); ++t) {
    const double a = r.uniform() - 0.5, b = r.uniform() - 0.5, c = r.uniform() - 0.5;
    q(t, 0) = a;
    q(t, 1) = b;
    q(t, 2) = c;
    q(t, 3) = a + 0.3 * (r.uniform() - 0.5);
    q(t, 4) = -b + 0.1 * c;
    q(t, 5) = 0.5 * a + 0.5 * b + (r.uniform() - 0.5);
  }
  return q;
}

}  // namespace

TEST_SUITE("redundancy") {

TEST_CASE("red score point values") {
  CHECK(red_score(0.0) == 0.0);
  CHECK(red_score(-0.5) == 0.0);
  CHECK(red_score(-1.0) == 0.0);
  CHECK(std::abs(red_score(0.8) - 0.51083) <= 1e-5);
  CHECK(std::abs(red_score(0.8) - (-0.5 * std::log(0.36))) <= 1e-15);
  CHECK(std::isfinite(red_score(1.0)));
  CHECK(red_score(1.0) == doctest::Approx(-0.5 * std::log1p(-kMaxCorrelation * kMaxCorrelation)));
  CHECK_NOTHROW(red_score(1.0 + 5e-10));
  CHECK_THROWS_AS(red_score(1.5), Error);
  CHECK_THROWS_AS(red_score(-1.1), Error);
  double prev = 0.0;
  for (int k = 0; k <= 100; ++k) {
    const double v = red_score(k / 100.0);
    CHECK(v >= prev);
    prev = v;
  }
}

TEST_CASE("top-k mean") {
  CHECK(top_k_mean(std::vector<double>{0.2}, 5) == 0.2);
  CHECK(top_k_mean(std::vector<double>{0.1, 0.5, 0.3}, 2) == doctest::Approx(0.4).epsilon(1e-15));
  CHECK(top_k_mean(std::vector<double>{0.1, 0.5, 0.3}, 9) == doctest::Approx(0.3).epsilon(1e-15));
}

TEST_CASE("directed redundancy is the top-k mean over the core") {
  const QCross q = qcross_from(correlated_series(400, 3), ChannelSets{{0, 1, 2}});
  for (std::size_t j : {3u, 4u, 5u}) {
    std::vector<double> reds;
    for (std::size_t s : {0u, 1u, 2u}) reds.push_back(red_score(pearson(q, 0, j, s).value));
    std::sort(reds.begin(), reds.end(), std::greater<>());
    CHECK(std::abs(directed_redundancy(q, 0, j, 2) - (reds[0] + reds[1]) / 2.0) <= 1e-15);
    CHECK(std::abs(directed_redundancy(q, 0, j, 5) - (reds[0] + reds[1] + reds[2]) / 3.0) <= 1e-15);
  }
  // Channel 3 tracks core channel 0 closely; channel 4 is anti-correlated with
  // channel 1, which the positive part ignores.
  CHECK(directed_redundancy(q, 0, 3, 1) > 1.0);
  CHECK(directed_redundancy(q, 0, 4, 1) < 0.05);
}

TEST_CASE("protect formula") {
  CHECK(protect_from_rank(0.0, 0.2, 8.0) == 1.0);
  CHECK(std::abs(protect_from_rank(1.0, 0.2, 8.0) - 0.2) <= 1e-9);
  CHECK(std::abs(protect_from_rank(0.5, 0.2, 8.0) - 0.996875) <= 1e-9);
  double prev = 1.0;
  for (int k = 0; k <= 50; ++k) {
    const double p = protect_from_rank(k / 50.0, 0.2, 8.0);
    CHECK(p <= prev);
    CHECK(p >= 0.2);
    CHECK(p <= 1.0);
    prev = p;
  }
}

TEST_CASE("redundancy ranks break ties by channel index") {
  const std::vector<double> v{0.3, 0.1, 0.3, 0.2};
  const std::vector<std::size_t> ch{9, 2, 4, 7};
  const auto r = redundancy_ranks(v, ch);
  // Order: 2 (0.1), 7 (0.2), 4 (0.3), 9 (0.3).
  CHECK(r == std::vector<double>{1.0, 0.0, 2.0 / 3.0, 1.0 / 3.0});
  CHECK(redundancy_ranks(std::vector<double>{5.0}, std::vector<std::size_t>{1}) ==
        std::vector<double>{0.0});
}

TEST_CASE("protect scores over a layer") {
  const std::vector<std::size_t> halo{1, 4, 6};
  const std::vector<double> red{0.9, 0.1, 0.5};
  const auto p = protect_scores(8, halo, red, 0.2, 8.0);
  CHECK(p[0] == 1.0);
  CHECK(p[2] == 1.0);
  CHECK(p[4] == 1.0);  // lowest redundancy, r = 0
  CHECK(std::abs(p[1] - 0.2) <= 1e-15);
  CHECK(std::abs(p[6] - 0.996875) <= 1e-12);
  const std::vector<std::size_t> single{3};
  const auto ps = protect_scores(5, single, std::vector<double>{2.0}, 0.2, 8.0);
  CHECK(ps[3] == 1.0);
  CHECK_THROWS_AS(protect_scores(5, single, std::vector<double>{2.0}, 0.0, 8.0), Error);
  CHECK_THROWS_AS(protect_scores(5, single, std::vector<double>{2.0}, 0.2, 0.5), Error);
}

TEST_CASE("redundancy table") {
  const QCross q = qcross_from(correlated_series(300, 4), ChannelSets{{0, 1, 2}});
  SupernodeSet core;
  core.layers = {{0, 1, 2}};
  HaloSet halos;
  halos.layers.resize(1);
  halos.layers[0].write_halo = {3, 5};
  const auto table = build_redundancy_table(q, core, halos, {});
  const auto& l = table.layers[0];
  CHECK(l.halo == std::vector<std::size_t>{3, 5});
  CHECK(l.halo_redundancy[0] == directed_redundancy(q, 0, 3, 5));
  CHECK(l.protect[4] == 1.0);
  for (double p : l.protect) {
    CHECK(p >= 0.2);
    CHECK(p <= 1.0);
  }
  // The more redundant halo channel gets the lower protection.
  const std::size_t hi = l.halo_redundancy[0] > l.halo_redundancy[1] ? 3 : 5;
  CHECK(std::abs(l.protect[hi] - 0.2) <= 1e-15);
  CHECK(l.redundancy_all[0] == 0.0);
  SupernodeSet other;
  other.layers = {{0, 1}};
  CHECK_THROWS_AS(build_redundancy_table(q, other, halos, {}), Error);
}

}
