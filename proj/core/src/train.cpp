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

#include "nodelens/train.hpp"

#include <cmath>
#include <span>
#include <string>

namespace nodelens {

TrainResult train_toy(const TinyModel& model, const TokenSequence& corpus,
                      const TrainOptions& options,
                      const TrainCallback& on_step) {
  if (options.steps < 1) throw_invalid("train_toy: steps must be >= 1");
  if (options.checkpoint_every < 1) {
    throw_invalid("train_toy: checkpoint_every must be >= 1");
  }
  if (options.batch_size < 1) throw_invalid("train_toy: batch_size must be >= 1");
  if (options.seq_len < 1 || options.seq_len > model.config.max_seq) {
    throw_invalid("train_toy: seq_len must be in [1, max_seq]");
  }
  if (corpus.size() < options.seq_len + 1) {
    throw_invalid("train_toy: corpus shorter than one training window");
  }

  TrainResult result;
  TinyModel params = model;
  TinyModel first_moment = zeros_like(model);
  TinyModel second_moment = zeros_like(model);
  result.checkpoints.push_back({0, params});

  Rng rng(options.seed);
  const std::size_t max_start = corpus.size() - options.seq_len - 1;
  const double inv_batch = 1.0 / static_cast<double>(options.batch_size);

  for (std::size_t step = 1; step <= options.steps; ++step) {
    TinyModel grad_sum = zeros_like(params);
    double loss_sum = 0.0;
    for (std::size_t b = 0; b < options.batch_size; ++b) {
      const std::size_t start = rng.below(max_start + 1);
      const std::span<const TokenId> window(corpus.data() + start,
                                            options.seq_len + 1);
      const auto inputs = window.first(options.seq_len);
      const auto targets = window.subspan(1);
      const auto run = forward(params, inputs);
      const auto back = backward_capture(params, run.cache, targets, inv_batch);
      loss_sum += back.loss;
      auto dst = grad_sum.tensors();
      const auto src = back.gradients.tensors();
      for (std::size_t k = 0; k < dst.size(); ++k) {
        for (std::size_t i = 0; i < dst[k].data.size(); ++i) {
          dst[k].data[i] += src[k].data[i];
        }
      }
    }
    const double loss = loss_sum * inv_batch;
    if (!std::isfinite(loss)) {
      throw Error(ErrorKind::kNumerical,
                  "train_toy: loss became non-finite at step " +
                      std::to_string(step) + " (lr=" +
                      std::to_string(options.learning_rate) + ")");
    }
    result.losses.push_back(loss);
    if (on_step) on_step(step, loss);

    const double bias1 = 1.0 - std::pow(options.beta1, static_cast<double>(step));
    const double bias2 = 1.0 - std::pow(options.beta2, static_cast<double>(step));
    auto p = params.tensors();
    auto m1 = first_moment.tensors();
    auto m2 = second_moment.tensors();
    const auto g = grad_sum.tensors();
    for (std::size_t k = 0; k < p.size(); ++k) {
      for (std::size_t i = 0; i < p[k].data.size(); ++i) {
        const double grad = g[k].data[i];
        double& a = m1[k].data[i];
        double& v = m2[k].data[i];
        a = options.beta1 * a + (1.0 - options.beta1) * grad;
        v = options.beta2 * v + (1.0 - options.beta2) * grad * grad;
        p[k].data[i] -= options.learning_rate * (a / bias1) /
                        (std::sqrt(v / bias2) + options.epsilon);
      }
    }

    if (step % options.checkpoint_every == 0) {
      result.checkpoints.push_back({step, params});
    }
  }
  result.final_model = std::move(params);
  return result;
}

}  // namespace nodelens
