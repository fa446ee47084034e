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

#include <benchmark/benchmark.h>

#include "nodelens/calib.hpp"
#include "nodelens/common.hpp"
#include "nodelens/model.hpp"
#include "nodelens/scar.hpp"

namespace {

using namespace nodelens;

ModelConfig toy_config() {
  ModelConfig c;
  c.d_model = 64;
  c.m_ffn = 256;
  c.n_layers = 4;
  c.n_heads = 4;
  c.vocab_size = 80;
  c.max_seq = 128;
  return c;
}

TokenSequence tokens(std::size_t n, std::size_t vocab) {
  Rng rng(1);
  TokenSequence out(n);
  for (auto& t : out) t = static_cast<TokenId>(rng.below(vocab));
  return out;
}

void BM_Forward(benchmark::State& state) {
  const TinyModel model = init_model(toy_config());
  const auto seq = tokens(static_cast<std::size_t>(state.range(0)), 80);
  for (auto _ : state) benchmark::DoNotOptimize(forward_logits(model, seq));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_Forward)->Arg(32)->Arg(128);

void BM_ForwardBackward(benchmark::State& state) {
  const TinyModel model = init_model(toy_config());
  const auto seq = tokens(static_cast<std::size_t>(state.range(0)) + 1, 80);
  const std::span<const TokenId> all(seq);
  for (auto _ : state) {
    const auto fwd = forward(model, all.first(all.size() - 1));
    benchmark::DoNotOptimize(backward_capture(model, fwd.cache, all.subspan(1)));
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_ForwardBackward)->Arg(32)->Arg(128);

void BM_Accumulate(benchmark::State& state) {
  const TinyModel model = init_model(toy_config());
  const auto seq = tokens(129, 80);
  const std::span<const TokenId> all(seq);
  const auto fwd = forward(model, all.first(128));
  const auto trace = backward_capture(model, fwd.cache, all.subspan(1)).trace;
  StatsAccumulator acc = StatsAccumulator::for_model(model);
  for (auto _ : state) acc.accumulate(trace);
  state.SetItemsProcessed(state.iterations() * 128);
}
BENCHMARK(BM_Accumulate);

void BM_SelectMask(benchmark::State& state) {
  const auto layers = static_cast<std::size_t>(state.range(0));
  Rng rng(2);
  LayerScores scores(layers, std::vector<double>(4096));
  for (auto& row : scores) {
    for (auto& x : row) x = rng.uniform();
  }
  ChannelSets core(layers);
  for (std::size_t l = 0; l < layers; ++l) core[l] = {0, 1, 2};
  const std::vector<double> caps = {0.7};
  for (auto _ : state) benchmark::DoNotOptimize(select_mask(scores, core, 0.5, caps));
  state.SetItemsProcessed(state.iterations() * state.range(0) * 4096);
}
BENCHMARK(BM_SelectMask)->Arg(4)->Arg(32);

}  // namespace

BENCHMARK_MAIN();
