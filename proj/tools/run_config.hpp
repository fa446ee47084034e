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
#include <string>
#include <vector>

namespace nodelens::cli {

/// Plain key=value run configuration. Unknown keys are rejected.
struct RunConfig {
  // Model.
  std::size_t d_model = 64;
  std::size_t m_ffn = 256;
  std::size_t n_layers = 4;
  std::size_t n_heads = 4;
  std::size_t max_seq = 128;

  // Data. The tail `holdout` fraction of `corpus` is the evaluation split.
  std::string corpus = "data/corpus.txt";
  std::string alt_corpus = "data/recipes.txt";
  double holdout = 0.1;

  // Training.
  std::size_t train_steps = 2000;
  double learning_rate = 3e-3;
  std::size_t checkpoint_every = 500;
  std::size_t batch_size = 4;
  std::size_t seq_len = 128;

  // Calibration.
  std::size_t calib_sequences = 64;
  std::size_t calib_length = 128;

  // Analysis.
  double rho = 0.01;
  double eta = 0.10;
  double eta_read = 0.10;
  std::size_t support_size = 0;  // 0: max(8, ceil(d/16))
  std::size_t topk = 5;
  double alpha = 0.2;
  double gamma = 8.0;

  // Pruning.
  double sparsity = 0.5;
  std::vector<double> caps = {0.7};
  std::string variant = "prot";
  std::string method = "scar";

  // Evaluation and experiments.
  std::uint64_t seed = 0;
  std::size_t trials = 5;
  std::vector<double> hit_fractions = {0.0, 0.1, 0.2, 0.3};
  std::vector<double> sweep_sparsities = {0.1, 0.3, 0.5, 0.7};
  std::size_t block_len = 128;
  std::size_t eval_tokens = 8192;
  std::size_t halo_ablation_n = 8;

  std::string out = "runs/default";
  std::size_t threads = 0;  // 0: hardware concurrency

  /// Applies one key=value assignment. Throws Error(kInvalidArgument).
  void set(const std::string& key, const std::string& value);
  /// Checks every module precondition that can be checked up front.
  void validate() const;
  /// Canonical key=value listing (for manifests).
  std::string to_text() const;
};

RunConfig load_run_config(const std::string& path);

}  // namespace nodelens::cli
