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

#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <vector>

#include "nodelens/model.hpp"

namespace nodelens {

struct TrainOptions {
  std::size_t steps = 2000;
  double learning_rate = 3e-3;
  std::size_t checkpoint_every = 500;
  std::size_t batch_size = 4;
  std::size_t seq_len = 128;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::uint64_t seed = 0;
};

struct Checkpoint {
  std::size_t step = 0;
  TinyModel model;
};

struct TrainResult {
  /// Snapshots at steps 0, k, 2k, ... (k = checkpoint_every).
  std::vector<Checkpoint> checkpoints;
  /// Mean batch loss before each update.
  std::vector<double> losses;
  TinyModel final_model;
};

/// Optional progress hook: (step, loss).
using TrainCallback = std::function<void(std::size_t, double)>;

/// Plain Adam on random contiguous windows of `corpus`; single-threaded and
/// fully deterministic given options.seed. Throws Error(kNumerical) if the
/// loss becomes non-finite.
TrainResult train_toy(const TinyModel& model, const TokenSequence& corpus,
                      const TrainOptions& options,
                      const TrainCallback& on_step = {});

}  // namespace nodelens
