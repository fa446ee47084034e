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

#include "nodelens/model.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <utility>

namespace nodelens {

namespace {

using Index = Eigen::Index;

constexpr double kRmsEps = 1e-6;

/// Per-layer list of (channel, forced value) pairs applied to u.
using Overrides = std::vector<std::vector<std::pair<std::size_t, double>>>;

void rmsnorm(const Matrix& x, const Vector& gain, Matrix& out,
             Vector& inv_rms) {
  const Index rows = x.rows();
  const Index cols = x.cols();
  out.resize(rows, cols);
  inv_rms.resize(rows);
  for (Index t = 0; t < rows; ++t) {
    double ss = 0.0;
    for (Index c = 0; c < cols; ++c) ss += x(t, c) * x(t, c);
    const double r = 1.0 / std::sqrt(ss / static_cast<double>(cols) + kRmsEps);
    inv_rms[t] = r;
    for (Index c = 0; c < cols; ++c) out(t, c) = x(t, c) * r * gain[c];
  }
}

// dx_j = r a_j - x_j r^3 / d * sum_c a_c x_c, with a = dy * gain.
void rmsnorm_backward(const Matrix& x, const Vector& gain,
                      const Vector& inv_rms, const Matrix& dy, Matrix& dx,
                      Vector& dgain) {
  const Index rows = x.rows();
  const Index cols = x.cols();
  dx.resize(rows, cols);
  for (Index t = 0; t < rows; ++t) {
    const double r = inv_rms[t];
    double dot = 0.0;
    for (Index c = 0; c < cols; ++c) {
      dot += dy(t, c) * gain[c] * x(t, c);
      dgain[c] += dy(t, c) * x(t, c) * r;
    }
    const double coef = r * r * r * dot / static_cast<double>(cols);
    for (Index c = 0; c < cols; ++c) {
      dx(t, c) = r * dy(t, c) * gain[c] - x(t, c) * coef;
    }
  }
}

void check_tokens(const ModelConfig& config, std::span<const TokenId> tokens) {
  if (tokens.empty()) throw_invalid("forward: empty token sequence");
  if (tokens.size() > config.max_seq) {
    throw_invalid("forward: sequence length " + std::to_string(tokens.size()) +
                  " exceeds max_seq " + std::to_string(config.max_seq));
  }
  for (TokenId t : tokens) {
    if (t >= config.vocab_size) {
      throw_invalid("forward: token id " + std::to_string(t) +
                    " out of range for vocab " +
                    std::to_string(config.vocab_size));
    }
  }
}

void check_channel_sets(const TinyModel& model, const ChannelSets& sets,
                        const char* what) {
  if (sets.empty()) return;
  if (sets.size() != model.layers.size()) {
    throw_invalid(std::string(what) + ": expected " +
                  std::to_string(model.layers.size()) + " layers, got " +
                  std::to_string(sets.size()));
  }
  for (std::size_t l = 0; l < sets.size(); ++l) {
    const std::size_t width = model.layers[l].ffn_width();
    for (std::size_t c : sets[l]) {
      if (c >= width) {
        throw_invalid(std::string(what) + ": channel " + std::to_string(c) +
                      " out of range in layer " + std::to_string(l) +
                      " (width " + std::to_string(width) + ")");
      }
    }
  }
}

/// Causal multi-head attention on normalized input `a`; writes the
/// concatenated head outputs to `out`.
void attention_forward(const LayerWeights& w, const Matrix& a,
                       std::size_t n_heads, Matrix& q, Matrix& k, Matrix& v,
                       std::vector<Matrix>* probs_out, Matrix& out) {
  q.noalias() = a * w.wq.transpose();
  k.noalias() = a * w.wk.transpose();
  v.noalias() = a * w.wv.transpose();
  const Index rows = a.rows();
  const Index dh = a.cols() / static_cast<Index>(n_heads);
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  out.resize(rows, a.cols());
  if (probs_out) probs_out->assign(n_heads, Matrix());
  Matrix scores(rows, rows);
  Matrix probs(rows, rows);
  for (std::size_t head = 0; head < n_heads; ++head) {
    const Index off = static_cast<Index>(head) * dh;
    scores.noalias() = q.middleCols(off, dh) * k.middleCols(off, dh).transpose();
    probs.setZero();
    for (Index t = 0; t < rows; ++t) {
      double peak = -std::numeric_limits<double>::infinity();
      for (Index j = 0; j <= t; ++j) peak = std::max(peak, scores(t, j) * scale);
      double total = 0.0;
      for (Index j = 0; j <= t; ++j) {
        const double e = std::exp(scores(t, j) * scale - peak);
        probs(t, j) = e;
        total += e;
      }
      for (Index j = 0; j <= t; ++j) probs(t, j) /= total;
    }
    out.middleCols(off, dh).noalias() = probs * v.middleCols(off, dh);
    if (probs_out) (*probs_out)[head] = probs;
  }
}

void ffn_forward(const LayerWeights& w, const Matrix& h,
                 const std::vector<std::pair<std::size_t, double>>* overrides,
                 Matrix& g, Matrix& z, Matrix& u, Matrix& y) {
  g.noalias() = h * w.w_gate.transpose();
  z.noalias() = h * w.w_up.transpose();
  u.resize(g.rows(), g.cols());
  for (Index t = 0; t < g.rows(); ++t) {
    for (Index i = 0; i < g.cols(); ++i) u(t, i) = silu(g(t, i)) * z(t, i);
  }
  if (overrides) {
    for (const auto& [channel, value] : *overrides) {
      u.col(static_cast<Index>(channel)).setConstant(value);
    }
  }
  y.noalias() = u * w.w_down.transpose();
}

Matrix run_layers(const TinyModel& model, std::size_t first_layer, Matrix x,
                  const Overrides* overrides, ForwardCache* cache) {
  LayerCache scratch;
  for (std::size_t l = first_layer; l < model.layers.size(); ++l) {
    const LayerWeights& w = model.layers[l];
    LayerCache& lc = cache ? cache->layers[l] : scratch;
    if (cache) lc.x_in = x;
    rmsnorm(x, w.attn_norm, lc.attn_in, lc.inv_rms_attn);
    attention_forward(w, lc.attn_in, model.config.n_heads, lc.q, lc.k, lc.v,
                      cache ? &lc.probs : nullptr, lc.heads);
    x.noalias() += lc.heads * w.wo.transpose();
    if (cache) lc.x_mid = x;
    rmsnorm(x, w.ffn_norm, lc.h, lc.inv_rms_ffn);
    const auto* layer_overrides =
        (overrides && !(*overrides)[l].empty()) ? &(*overrides)[l] : nullptr;
    ffn_forward(w, lc.h, layer_overrides, lc.g, lc.z, lc.u, lc.y);
    x += lc.y;
  }

  Matrix normed;
  Vector inv_rms;
  rmsnorm(x, model.final_norm, normed, inv_rms);
  Matrix logits = normed * model.unembed.transpose();
  if (cache) {
    cache->x_final = std::move(x);
    cache->inv_rms_final = std::move(inv_rms);
    cache->final_normed = std::move(normed);
    cache->model_fingerprint = fingerprint(model);
  }
  return logits;
}

Matrix forward_impl(const TinyModel& model, std::span<const TokenId> tokens,
                    const Overrides* overrides, ForwardCache* cache) {
  check_tokens(model.config, tokens);
  const Index rows = static_cast<Index>(tokens.size());
  const Index d = static_cast<Index>(model.config.d_model);

  Matrix x(rows, d);
  for (Index t = 0; t < rows; ++t) {
    x.row(t) = model.tok_emb.row(tokens[static_cast<std::size_t>(t)]) +
               model.pos_emb.row(t);
  }

  if (cache) {
    cache->layers.assign(model.layers.size(), LayerCache());
    cache->tokens.assign(tokens.begin(), tokens.end());
  }
  return run_layers(model, 0, std::move(x), overrides, cache);
}

void fill_uniform(std::span<double> data, std::uint64_t key, double bound) {
  for (std::size_t i = 0; i < data.size(); ++i) {
    data[i] = (2.0 * counter_uniform(key, i) - 1.0) * bound;
  }
}

}  // namespace

double silu(double x) { return x / (1.0 + std::exp(-x)); }

double silu_grad(double x) {
  const double sig = 1.0 / (1.0 + std::exp(-x));
  return sig * (1.0 + x * (1.0 - sig));
}

void ModelConfig::validate() const {
  if (d_model == 0 || m_ffn == 0 || n_layers == 0 || n_heads == 0 ||
      vocab_size == 0 || max_seq == 0) {
    throw_invalid("model config: all dimensions must be positive");
  }
  if (m_ffn < 2) throw_invalid("model config: m_ffn must be >= 2");
  if (d_model % n_heads != 0) {
    throw_invalid("model config: d_model must be divisible by n_heads");
  }
}

std::vector<std::size_t> TinyModel::ffn_widths() const {
  std::vector<std::size_t> widths;
  widths.reserve(layers.size());
  for (const auto& layer : layers) widths.push_back(layer.ffn_width());
  return widths;
}

std::size_t TinyModel::parameter_count() const {
  std::size_t total = 0;
  for (const auto& t : tensors()) total += t.data.size();
  return total;
}

namespace {

template <typename View, typename Model>
std::vector<View> collect_tensors(Model& model) {
  std::vector<View> out;
  auto add_matrix = [&](std::string name, auto& m) {
    out.push_back(View{std::move(name), {m.data(), static_cast<std::size_t>(m.size())},
                       static_cast<std::size_t>(m.rows()),
                       static_cast<std::size_t>(m.cols())});
  };
  add_matrix("tok_emb", model.tok_emb);
  add_matrix("pos_emb", model.pos_emb);
  for (std::size_t l = 0; l < model.layers.size(); ++l) {
    auto& w = model.layers[l];
    const std::string prefix = "layers." + std::to_string(l) + ".";
    add_matrix(prefix + "attn_norm", w.attn_norm);
    add_matrix(prefix + "wq", w.wq);
    add_matrix(prefix + "wk", w.wk);
    add_matrix(prefix + "wv", w.wv);
    add_matrix(prefix + "wo", w.wo);
    add_matrix(prefix + "ffn_norm", w.ffn_norm);
    add_matrix(prefix + "w_gate", w.w_gate);
    add_matrix(prefix + "w_up", w.w_up);
    add_matrix(prefix + "w_down", w.w_down);
  }
  add_matrix("final_norm", model.final_norm);
  add_matrix("unembed", model.unembed);
  return out;
}

}  // namespace

std::vector<TensorView> TinyModel::tensors() {
  return collect_tensors<TensorView>(*this);
}

std::vector<ConstTensorView> TinyModel::tensors() const {
  return collect_tensors<ConstTensorView>(*this);
}

TinyModel zeros_like(const TinyModel& model) {
  TinyModel out = model;
  for (auto& t : out.tensors()) std::fill(t.data.begin(), t.data.end(), 0.0);
  return out;
}

std::size_t expected_parameter_count(const ModelConfig& c) {
  const std::size_t d = c.d_model;
  const std::size_t per_layer = d + 4 * d * d + d + 3 * c.m_ffn * d;
  return c.vocab_size * d + c.max_seq * d + c.n_layers * per_layer + d +
         c.vocab_size * d;
}

std::uint64_t fingerprint(const TinyModel& model) {
  const ModelConfig& c = model.config;
  const std::uint64_t header[] = {c.d_model,    c.m_ffn,    c.n_layers,
                                  c.n_heads,    c.vocab_size, c.max_seq,
                                  c.seed};
  std::uint64_t h = fnv1a64(std::as_bytes(std::span(header)));
  for (const auto& t : model.tensors()) {
    h = fnv1a64(t.name, h);
    const std::uint64_t shape[] = {t.rows, t.cols};
    h = fnv1a64(std::as_bytes(std::span(shape)), h);
    h = fnv1a64(std::as_bytes(t.data), h);
  }
  return h;
}

TinyModel init_model(const ModelConfig& config) {
  config.validate();
  const auto d = static_cast<Index>(config.d_model);
  const auto m = static_cast<Index>(config.m_ffn);
  const auto vocab = static_cast<Index>(config.vocab_size);

  TinyModel model;
  model.config = config;
  model.tok_emb.resize(vocab, d);
  model.pos_emb.resize(static_cast<Index>(config.max_seq), d);
  model.layers.resize(config.n_layers);
  for (auto& w : model.layers) {
    w.attn_norm = Vector::Ones(d);
    w.wq.resize(d, d);
    w.wk.resize(d, d);
    w.wv.resize(d, d);
    w.wo.resize(d, d);
    w.ffn_norm = Vector::Ones(d);
    w.w_gate.resize(m, d);
    w.w_up.resize(m, d);
    w.w_down.resize(d, m);
  }
  model.final_norm = Vector::Ones(d);
  model.unembed.resize(vocab, d);

  const std::uint64_t seed_key = mix64(config.seed);
  for (auto& t : model.tensors()) {
    if (t.name.ends_with("norm")) continue;  // gains stay at one
    // Embedding lookups read a one-hot input, so their fan-in is 1.
    const bool embedding = t.name == "tok_emb" || t.name == "pos_emb";
    const double fan_in = embedding ? 1.0 : static_cast<double>(t.cols);
    fill_uniform(t.data, seed_key ^ fnv1a64(t.name), 1.0 / std::sqrt(fan_in));
  }
  return model;
}

ForwardResult forward(const TinyModel& model, std::span<const TokenId> tokens) {
  ForwardResult result;
  result.logits = forward_impl(model, tokens, nullptr, &result.cache);
  return result;
}

Matrix forward_logits(const TinyModel& model, std::span<const TokenId> tokens) {
  return forward_impl(model, tokens, nullptr, nullptr);
}

std::vector<double> token_nll(const Matrix& logits,
                              std::span<const TokenId> targets) {
  if (static_cast<std::size_t>(logits.rows()) != targets.size()) {
    throw_invalid("nll_loss: " + std::to_string(targets.size()) +
                  " targets for " + std::to_string(logits.rows()) +
                  " positions");
  }
  std::vector<double> out(targets.size());
  for (Index t = 0; t < logits.rows(); ++t) {
    const auto target = static_cast<Index>(targets[static_cast<std::size_t>(t)]);
    if (target >= logits.cols()) throw_invalid("nll_loss: target out of range");
    const double peak = logits.row(t).maxCoeff();
    double total = 0.0;
    for (Index c = 0; c < logits.cols(); ++c) total += std::exp(logits(t, c) - peak);
    out[static_cast<std::size_t>(t)] = std::log(total) + peak - logits(t, target);
  }
  return out;
}

double nll_loss(const Matrix& logits, std::span<const TokenId> targets) {
  const auto values = token_nll(logits, targets);
  double total = 0.0;
  for (double v : values) total += v;
  return total / static_cast<double>(values.size());
}

BackwardResult backward_capture(const TinyModel& model,
                                const ForwardCache& cache,
                                std::span<const TokenId> targets,
                                double loss_scale) {
  if (cache.layers.size() != model.layers.size() ||
      cache.model_fingerprint != fingerprint(model)) {
    throw_invalid("backward_capture: stale cache (model fingerprint mismatch)");
  }
  const Index rows = static_cast<Index>(cache.tokens.size());
  if (static_cast<Index>(targets.size()) != rows) {
    throw_invalid("backward_capture: target length mismatch");
  }
  const auto n_heads = model.config.n_heads;
  const Index hd = static_cast<Index>(model.config.head_dim());
  const double scale = 1.0 / std::sqrt(static_cast<double>(hd));

  BackwardResult result;
  result.gradients = zeros_like(model);
  TinyModel& grads = result.gradients;
  result.trace.u.resize(model.layers.size());
  result.trace.s.resize(model.layers.size());
  result.trace.h.resize(model.layers.size());

  const Matrix logits = cache.final_normed * model.unembed.transpose();
  result.loss = nll_loss(logits, targets);

  // d(loss)/d(logits) = (softmax - onehot) / T
  Matrix dlogits(rows, logits.cols());
  const double row_scale = loss_scale / static_cast<double>(rows);
  for (Index t = 0; t < rows; ++t) {
    const double peak = logits.row(t).maxCoeff();
    double total = 0.0;
    for (Index c = 0; c < logits.cols(); ++c) {
      dlogits(t, c) = std::exp(logits(t, c) - peak);
      total += dlogits(t, c);
    }
    for (Index c = 0; c < logits.cols(); ++c) dlogits(t, c) /= total;
    dlogits(t, static_cast<Index>(targets[static_cast<std::size_t>(t)])) -= 1.0;
    dlogits.row(t) *= row_scale;
  }

  grads.unembed.noalias() = dlogits.transpose() * cache.final_normed;
  Matrix dnormed = dlogits * model.unembed;
  Matrix dx;
  rmsnorm_backward(cache.x_final, model.final_norm, cache.inv_rms_final,
                   dnormed, dx, grads.final_norm);

  Matrix dnorm_part, dh, dg, dz, dheads, dq, dk, dv, dp, ds, da;
  for (std::size_t li = model.layers.size(); li-- > 0;) {
    const LayerWeights& w = model.layers[li];
    const LayerCache& lc = cache.layers[li];
    LayerWeights& gw = grads.layers[li];

    // FFN: dx is the loss gradient g_y at the FFN output.
    Matrix du = dx * w.w_down;
    gw.w_down.noalias() = dx.transpose() * lc.u;
    dg.resize(du.rows(), du.cols());
    dz.resize(du.rows(), du.cols());
    for (Index t = 0; t < du.rows(); ++t) {
      for (Index i = 0; i < du.cols(); ++i) {
        const double gate = lc.g(t, i);
        dz(t, i) = du(t, i) * silu(gate);
        dg(t, i) = du(t, i) * lc.z(t, i) * silu_grad(gate);
      }
    }
    gw.w_gate.noalias() = dg.transpose() * lc.h;
    gw.w_up.noalias() = dz.transpose() * lc.h;
    dh.noalias() = dg * w.w_gate;
    dh.noalias() += dz * w.w_up;
    rmsnorm_backward(lc.x_mid, w.ffn_norm, lc.inv_rms_ffn, dh, dnorm_part,
                     gw.ffn_norm);
    result.trace.u[li] = lc.u;
    result.trace.h[li] = lc.h;
    result.trace.s[li] = std::move(du);
    Matrix dx_mid = dx + dnorm_part;

    // Attention.
    gw.wo.noalias() = dx_mid.transpose() * lc.heads;
    dheads.noalias() = dx_mid * w.wo;
    dq.setZero(rows, dheads.cols());
    dk.setZero(rows, dheads.cols());
    dv.setZero(rows, dheads.cols());
    ds.resize(rows, rows);
    for (std::size_t head = 0; head < n_heads; ++head) {
      const Index off = static_cast<Index>(head) * hd;
      const Matrix& probs = lc.probs[head];
      dv.middleCols(off, hd).noalias() =
          probs.transpose() * dheads.middleCols(off, hd);
      dp.noalias() = dheads.middleCols(off, hd) * lc.v.middleCols(off, hd).transpose();
      ds.setZero();
      for (Index t = 0; t < rows; ++t) {
        double dot = 0.0;
        for (Index j = 0; j <= t; ++j) dot += probs(t, j) * dp(t, j);
        for (Index j = 0; j <= t; ++j) ds(t, j) = probs(t, j) * (dp(t, j) - dot) * scale;
      }
      dq.middleCols(off, hd).noalias() = ds * lc.k.middleCols(off, hd);
      dk.middleCols(off, hd).noalias() = ds.transpose() * lc.q.middleCols(off, hd);
    }
    gw.wq.noalias() = dq.transpose() * lc.attn_in;
    gw.wk.noalias() = dk.transpose() * lc.attn_in;
    gw.wv.noalias() = dv.transpose() * lc.attn_in;
    da.noalias() = dq * w.wq;
    da.noalias() += dk * w.wk;
    da.noalias() += dv * w.wv;
    rmsnorm_backward(lc.x_in, w.attn_norm, lc.inv_rms_attn, da, dnorm_part,
                     gw.attn_norm);
    dx = dx_mid + dnorm_part;
  }

  for (Index t = 0; t < rows; ++t) {
    grads.tok_emb.row(cache.tokens[static_cast<std::size_t>(t)]) += dx.row(t);
    grads.pos_emb.row(t) += dx.row(t);
  }
  return result;
}

Matrix forward_from_residual(const TinyModel& model, std::size_t first_layer,
                             Matrix residual) {
  if (first_layer > model.layers.size()) {
    throw_invalid("forward_from_residual: layer out of range");
  }
  if (residual.cols() != static_cast<Index>(model.config.d_model) ||
      static_cast<std::size_t>(residual.rows()) > model.config.max_seq) {
    throw_invalid("forward_from_residual: residual has the wrong shape");
  }
  return run_layers(model, first_layer, std::move(residual), nullptr, nullptr);
}

Matrix masked_forward(const TinyModel& model, const ChannelSets& mask,
                      std::span<const TokenId> tokens) {
  check_channel_sets(model, mask, "masked_forward");
  Overrides overrides(model.layers.size());
  for (std::size_t l = 0; l < mask.size(); ++l) {
    for (std::size_t c : mask[l]) overrides[l].emplace_back(c, 0.0);
  }
  return forward_impl(model, tokens, &overrides, nullptr);
}

Matrix mean_replace_forward(const TinyModel& model, const ChannelSets& channels,
                            const std::vector<std::vector<double>>& means,
                            std::span<const TokenId> tokens) {
  check_channel_sets(model, channels, "mean_replace_forward");
  if (!channels.empty() && means.size() != channels.size()) {
    throw_invalid("mean_replace_forward: means missing for some layers");
  }
  Overrides overrides(model.layers.size());
  for (std::size_t l = 0; l < channels.size(); ++l) {
    if (means[l].size() != channels[l].size()) {
      throw_invalid("mean_replace_forward: missing mean for a listed channel "
                    "in layer " + std::to_string(l));
    }
    for (std::size_t k = 0; k < channels[l].size(); ++k) {
      overrides[l].emplace_back(channels[l][k], means[l][k]);
    }
  }
  return forward_impl(model, tokens, &overrides, nullptr);
}

TinyModel remove_channels(const TinyModel& model, const ChannelSets& mask) {
  check_channel_sets(model, mask, "remove_channels");
  TinyModel out = model;
  for (std::size_t l = 0; l < mask.size(); ++l) {
    if (mask[l].empty()) continue;
    const LayerWeights& w = model.layers[l];
    std::vector<bool> pruned(w.ffn_width(), false);
    for (std::size_t c : mask[l]) pruned[c] = true;
    std::vector<Index> keep;
    for (std::size_t c = 0; c < pruned.size(); ++c) {
      if (!pruned[c]) keep.push_back(static_cast<Index>(c));
    }
    if (keep.empty()) {
      throw_invalid("remove_channels: layer " + std::to_string(l) +
                    " would lose every channel");
    }
    const auto kept = static_cast<Index>(keep.size());
    LayerWeights& nw = out.layers[l];
    nw.w_gate.resize(kept, w.w_gate.cols());
    nw.w_up.resize(kept, w.w_up.cols());
    nw.w_down.resize(w.w_down.rows(), kept);
    for (Index k = 0; k < kept; ++k) {
      nw.w_gate.row(k) = w.w_gate.row(keep[static_cast<std::size_t>(k)]);
      nw.w_up.row(k) = w.w_up.row(keep[static_cast<std::size_t>(k)]);
      nw.w_down.col(k) = w.w_down.col(keep[static_cast<std::size_t>(k)]);
    }
  }
  return out;
}

std::vector<double> ablate_support_input(const TinyModel& model,
                                         std::size_t layer,
                                         std::span<const std::size_t> support,
                                         std::span<const TokenId> tokens) {
  if (layer + 1 >= model.layers.size()) {
    throw_invalid("ablate_support_input: layer " + std::to_string(layer) +
                  " has no successor");
  }
  for (std::size_t c : support) {
    if (c >= model.config.d_model) {
      throw_invalid("ablate_support_input: support index " + std::to_string(c) +
                    " >= d_model");
    }
  }
  const auto run = forward(model, tokens);
  const LayerCache& next = run.cache.layers[layer + 1];
  const LayerWeights& w = model.layers[layer + 1];

  Matrix h = next.h;
  for (std::size_t c : support) h.col(static_cast<Index>(c)).setZero();
  Matrix g, z, u, y;
  ffn_forward(w, h, nullptr, g, z, u, y);

  const Index rows = u.rows();
  std::vector<double> delta(static_cast<std::size_t>(u.cols()), 0.0);
  for (Index i = 0; i < u.cols(); ++i) {
    double total = 0.0;
    for (Index t = 0; t < rows; ++t) total += std::abs(u(t, i) - next.u(t, i));
    delta[static_cast<std::size_t>(i)] = total / static_cast<double>(rows);
  }
  return delta;
}

}  // namespace nodelens
