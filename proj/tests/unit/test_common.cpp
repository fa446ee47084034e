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

#include <atomic>
#include <cstring>
#include <set>

#include "fixtures.hpp"
#include "nodelens/common.hpp"

using namespace nodelens;

TEST_SUITE("common") {

TEST_CASE("crc32 matches the standard check value") {
  const char* text = "123456789";
  std::vector<std::byte> bytes(9);
  std::memcpy(bytes.data(), text, 9);
  CHECK(crc32(bytes) == 0xCBF43926u);
}

TEST_CASE("crc32 is incremental") {
  std::vector<std::byte> bytes(100);
  for (std::size_t i = 0; i < bytes.size(); ++i) bytes[i] = std::byte(i * 7 + 3);
  const std::uint32_t whole = crc32(bytes);
  const std::span<const std::byte> all(bytes);
  CHECK(crc32(all.subspan(40), crc32(all.first(40))) == whole);
}

TEST_CASE("fnv1a64 reference values") {
  CHECK(fnv1a64(std::string_view("")) == 0xcbf29ce484222325ULL);
  CHECK(fnv1a64(std::string_view("a")) == 0xaf63dc4c8601ec8cULL);
}

TEST_CASE("Rng is reproducible and below() stays in range") {
  Rng a(42), b(42), c(43);
  bool differs = false;
  for (int k = 0; k < 100; ++k) {
    const auto x = a.next_u64();
    CHECK(x == b.next_u64());
    differs |= x != c.next_u64();
  }
  CHECK(differs);
  Rng r(7);
  std::set<std::uint64_t> seen;
  for (int k = 0; k < 2000; ++k) {
    const auto v = r.below(5);
    CHECK(v < 5);
    seen.insert(v);
  }
  CHECK(seen.size() == 5);
}

TEST_CASE("shuffle is a permutation") {
  std::vector<int> v(50);
  for (int i = 0; i < 50; ++i) v[i] = i;
  Rng r(3);
  r.shuffle(v);
  std::vector<int> sorted = v;
  std::sort(sorted.begin(), sorted.end());
  for (int i = 0; i < 50; ++i) CHECK(sorted[i] == i);
}

TEST_CASE("counter_uniform lies in [0, 1) and depends on the key") {
  for (std::uint64_t i = 0; i < 1000; ++i) {
    const double u = counter_uniform(9, i);
    CHECK(u >= 0.0);
    CHECK(u < 1.0);
  }
  CHECK(counter_uniform(1, 0) != counter_uniform(2, 0));
  CHECK(derive_seed(5, 0) != derive_seed(5, 1));
}

TEST_CASE("parallel_for visits every index exactly once") {
  const std::size_t saved = worker_count();
  for (std::size_t workers : {1u, 3u, 8u}) {
    set_worker_count(workers);
    std::vector<std::atomic<int>> hits(97);
    parallel_for(hits.size(), [&](std::size_t i) { hits[i]++; });
    for (auto& h : hits) CHECK(h.load() == 1);
  }
  set_worker_count(saved);
}

TEST_CASE("errors carry their kind") {
  try {
    throw_invalid("bad");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::kInvalidArgument);
  }
  const FormatError f(FormatErrorKind::kChecksum, "x");
  CHECK(f.kind() == ErrorKind::kFormat);
  CHECK(f.format_kind() == FormatErrorKind::kChecksum);
}

}
