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

// Desk-scale decoder-only transformer with SwiGLU feed-forward blocks.
//
// Block layout (pre-norm, no biases, untied unembedding, learned absolute
// positions):
//
//   a   = rmsnorm(x) * attn_gain
//   x'  = x + Wo * causal_mha(Wq a, Wk a, Wv a)
//   h   = rmsnorm(x') * ffn_gain
//   g   = W_gate h,  z = W_up h,  u = silu(g) * z
//   y   = W_down u
//   out = x' + y
//
// Everything is double precision. Activations are stored token-major: a
// [T x d] matrix holds one token per row.

#pragma once

#include <Eigen/Core>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "nodelens/common.hpp"
#include "nodelens/tokenizer.hpp"

namespace nodelens {

using Matrix =
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;

struct ModelConfig {
  std::size_t d_model = 64;
  std::size_t m_ffn = 256;
  std::size_t n_layers = 4;
  std::size_t n_heads = 4;
  std::size_t vocab_size = 64;
  std::size_t max_seq = 128;
  std::uint64_t seed = 0;

  std::size_t head_dim() const { return d_model / n_heads; }
  /// Throws Error(kInvalidArgument) on any violated invariant.
  void validate() const;

  bool operator==(const ModelConfig&) const = default;
};

struct LayerWeights {
  Vector attn_norm;  // [d]
  Matrix wq, wk, wv, wo;  // [d x d], output x input
  Vector ffn_norm;  // [d]
  Matrix w_gate;  // [m x d]
  Matrix w_up;    // [m x d]
  Matrix w_down;  // [d x m]; column i is the write direction of channel i

  std::size_t ffn_width() const { return static_cast<std::size_t>(w_gate.rows()); }
};

/// Mutable view of one named parameter tensor (row-major storage).
struct TensorView {
  std::string name;
  std::span<double> data;
  std::size_t rows = 0;
  std::size_t cols = 0;
};

struct ConstTensorView {
  std::string name;
  std::span<const double> data;
  std::size_t rows = 0;
  std::size_t cols = 0;
};

struct TinyModel {
  ModelConfig config;
  Matrix tok_emb;  // [V x d]
  Matrix pos_emb;  // [max_seq x d]
  std::vector<LayerWeights> layers;
  Vector final_norm;  // [d]
  Matrix unembed;  // [V x d]

  /// Current FFN width of every layer (differs from config.m_ffn after
  /// channel removal).
  std::vector<std::size_t> ffn_widths() const;
  std::size_t parameter_count() const;

  /// Parameter tensors in canonical order with stable names
  /// ("tok_emb", "layers.0.w_gate", ...).
  std::vector<TensorView> tensors();
  std::vector<ConstTensorView> tensors() const;
};

/// Same shapes as `model`, all entries zero.
TinyModel zeros_like(const TinyModel& model);

/// Analytic parameter count for an unpruned model with this configuration.
std::size_t expected_parameter_count(const ModelConfig& config);

/// 64-bit hash over the configuration, FFN widths and parameter bytes.
std::uint64_t fingerprint(const TinyModel& model);

/// Deterministic initialization: every tensor draws uniform(-b, b) from a
/// counter-based stream keyed by (seed, tensor name), b = 1/sqrt(fan_in).
/// RMS-norm gains start at one.
TinyModel init_model(const ModelConfig& config);

struct LayerCache {
  Matrix x_in;   // residual input [T x d]
  Vector inv_rms_attn;  // [T]
  Matrix attn_in;  // normalized attention input
  Matrix q, k, v;  // [T x d]
  std::vector<Matrix> probs;  // per head [T x T], zero above the diagonal
  Matrix heads;  // concatenated head outputs [T x d]
  Matrix x_mid;  // residual after attention
  Vector inv_rms_ffn;
  Matrix h;  // post-norm FFN input [T x d]
  Matrix g;  // gate pre-activation [T x m]
  Matrix z;  // up pre-activation [T x m]
  Matrix u;  // silu(g) * z, after any channel intervention
  Matrix y;  // FFN output [T x d]
};

struct ForwardCache {
  std::vector<LayerCache> layers;
  Matrix x_final;
  Vector inv_rms_final;
  Matrix final_normed;
  TokenSequence tokens;
  std::uint64_t model_fingerprint = 0;
};

/// Per-layer FFN intermediate u and projected gradient s = W_down^T g_y.
struct ChannelTrace {
  std::vector<Matrix> u;  // per layer [T x m]
  std::vector<Matrix> s;  // per layer [T x m]
  std::vector<Matrix> h;  // per layer post-norm FFN input [T x d]

  std::size_t token_count() const {
    return u.empty() ? 0 : static_cast<std::size_t>(u.front().rows());
  }
};

struct ForwardResult {
  Matrix logits;  // [T x V]
  ForwardCache cache;
};

ForwardResult forward(const TinyModel& model, std::span<const TokenId> tokens);

/// Logits only; skips building the cache.
Matrix forward_logits(const TinyModel& model, std::span<const TokenId> tokens);

/// Runs layers first_layer.. and the output head on a residual stream that
/// is the input to layer `first_layer` (the final norm input when
/// first_layer == n_layers).
Matrix forward_from_residual(const TinyModel& model, std::size_t first_layer,
                             Matrix residual);

/// Mean next-token negative log-likelihood in nats/token.
double nll_loss(const Matrix& logits, std::span<const TokenId> targets);

/// Per-position NLL values.
std::vector<double> token_nll(const Matrix& logits,
                              std::span<const TokenId> targets);

struct BackwardResult {
  TinyModel gradients;
  ChannelTrace trace;
  double loss = 0.0;  // unscaled mean NLL
};

/// Exact reverse-mode gradients of loss_scale * nll_loss(forward(tokens)).
/// The cache must come from forward() on this exact model; a fingerprint
/// mismatch throws Error(kInvalidArgument).
BackwardResult backward_capture(const TinyModel& model,
                                const ForwardCache& cache,
                                std::span<const TokenId> targets,
                                double loss_scale = 1.0);

/// Forward with u_i forced to 0 for every masked channel.
Matrix masked_forward(const TinyModel& model, const ChannelSets& mask,
                      std::span<const TokenId> tokens);

/// Deletes rows of W_gate/W_up and columns of W_down for masked channels.
/// Throws if a layer would lose every channel.
TinyModel remove_channels(const TinyModel& model, const ChannelSets& mask);

/// Forward with u_i replaced by a constant. `means[l][k]` is the value for
/// channel `channels[l][k]`.
Matrix mean_replace_forward(const TinyModel& model, const ChannelSets& channels,
                            const std::vector<std::vector<double>>& means,
                            std::span<const TokenId> tokens);

/// Zeroes coordinates `support` of the post-norm FFN input of layer
/// `layer + 1`, recomputes that layer's u and returns the per-channel mean
/// over tokens of |u_ablated - u_clean|.
std::vector<double> ablate_support_input(const TinyModel& model,
                                         std::size_t layer,
                                         std::span<const std::size_t> support,
                                         std::span<const TokenId> tokens);

/// Elementwise SiLU and its derivative.
double silu(double x);
double silu_grad(double x);

}  // namespace nodelens
