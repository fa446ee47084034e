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

#include "nodelens/calib.hpp"

#include <algorithm>
#include <cmath>
#include <span>
#include <string>

namespace nodelens {

namespace {

using Index = Eigen::Index;

std::vector<std::vector<double>> zero_table(const std::vector<std::size_t>& widths) {
  std::vector<std::vector<double>> out;
  out.reserve(widths.size());
  for (std::size_t w : widths) out.emplace_back(w, 0.0);
  return out;
}

void add_into(std::vector<std::vector<double>>& dst,
              const std::vector<std::vector<double>>& src) {
  for (std::size_t l = 0; l < dst.size(); ++l) {
    for (std::size_t i = 0; i < dst[l].size(); ++i) dst[l][i] += src[l][i];
  }
}

std::vector<std::vector<double>> scaled(const std::vector<std::vector<double>>& sums,
                                        double factor) {
  auto out = sums;
  for (auto& row : out) {
    for (double& v : row) v *= factor;
  }
  return out;
}

void check_trace_shape(const ChannelTrace& trace,
                       const std::vector<std::size_t>& widths) {
  if (trace.u.size() != widths.size() || trace.s.size() != widths.size()) {
    throw_invalid("accumulate: trace has " + std::to_string(trace.u.size()) +
                  " layers, accumulator expects " + std::to_string(widths.size()));
  }
  for (std::size_t l = 0; l < widths.size(); ++l) {
    const auto width = static_cast<Index>(widths[l]);
    if (trace.u[l].cols() != width || trace.s[l].cols() != width ||
        trace.u[l].rows() != trace.s[l].rows() ||
        trace.u[l].rows() != trace.u.front().rows()) {
      throw_invalid("accumulate: trace dimension mismatch in layer " +
                    std::to_string(l));
    }
  }
}

/// Pass-1 or pass-2 driver over windows in contiguous shards.
template <typename Acc, typename MakeAcc>
Acc sharded_calibration(const TinyModel& model,
                        const std::vector<TokenSequence>& windows,
                        const MakeAcc& make) {
  for (const auto& w : windows) {
    if (w.size() < 2) throw_invalid("calibrate: window needs >= 2 tokens");
  }
  const std::size_t shards = std::max<std::size_t>(
      1, std::min(worker_count(), windows.size()));
  std::vector<Acc> partial;
  partial.reserve(shards);
  for (std::size_t k = 0; k < shards; ++k) partial.push_back(make());
  parallel_for(shards, [&](std::size_t shard) {
    const std::size_t begin = windows.size() * shard / shards;
    const std::size_t end = windows.size() * (shard + 1) / shards;
    for (std::size_t i = begin; i < end; ++i) {
      const std::span<const TokenId> seq(windows[i]);
      const auto inputs = seq.first(seq.size() - 1);
      const auto targets = seq.subspan(1);
      const auto run = forward(model, inputs);
      const auto back = backward_capture(model, run.cache, targets);
      partial[shard].accumulate(back.trace);
    }
  });
  Acc total = make();
  for (const auto& p : partial) total.merge(p);
  return total;
}

}  // namespace

std::vector<std::size_t> ChannelStats::widths() const {
  std::vector<std::size_t> out;
  for (const auto& row : lp) out.push_back(row.size());
  return out;
}

void ChannelStats::validate() const {
  const auto w = widths();
  auto check = [&](const std::vector<std::vector<double>>& table,
                   const char* name, bool nonnegative, bool required) {
    if (table.empty() && !required) return;
    if (table.size() != w.size()) {
      throw_invalid(std::string("stats: ") + name + " layer count mismatch");
    }
    for (std::size_t l = 0; l < w.size(); ++l) {
      if (table[l].size() != w[l]) {
        throw_invalid(std::string("stats: ") + name + " width mismatch in layer " +
                      std::to_string(l));
      }
      for (double v : table[l]) {
        if (!std::isfinite(v) || (nonnegative && v < 0.0)) {
          throw_invalid(std::string("stats: invalid ") + name + " value in layer " +
                        std::to_string(l));
        }
      }
    }
  };
  if (lp.empty()) throw_invalid("stats: no layers");
  check(lp, "lp", true, true);
  check(act_power, "act_power", true, true);
  check(curvature, "curvature", true, true);
  check(act_mean, "act_mean", false, false);
  if (!input_power.empty()) {
    if (input_power.size() != w.size()) throw_invalid("stats: input_power layers");
    for (const auto& row : input_power) {
      for (double v : row) {
        if (!std::isfinite(v) || v < 0.0) throw_invalid("stats: invalid input_power");
      }
    }
  }
  if (token_count == 0) throw_invalid("stats: token_count must be positive");
}

StatsAccumulator::StatsAccumulator(std::vector<std::size_t> widths,
                                   std::size_t d_model,
                                   std::uint64_t model_fingerprint)
    : widths_(std::move(widths)),
      d_model_(d_model),
      fingerprint_(model_fingerprint) {
  if (widths_.empty()) throw_invalid("StatsAccumulator: no layers");
  lp_sum_ = zero_table(widths_);
  u2_sum_ = zero_table(widths_);
  s2_sum_ = zero_table(widths_);
  u_sum_ = zero_table(widths_);
  h2_sum_.assign(widths_.size(), std::vector<double>(d_model_, 0.0));
}

StatsAccumulator StatsAccumulator::for_model(const TinyModel& model) {
  return StatsAccumulator(model.ffn_widths(), model.config.d_model,
                          fingerprint(model));
}

void StatsAccumulator::accumulate(const ChannelTrace& trace) {
  if (!shaped()) throw_invalid("accumulate: accumulator has no shape");
  check_trace_shape(trace, widths_);
  const bool with_inputs = trace.h.size() == widths_.size();
  for (std::size_t l = 0; l < widths_.size(); ++l) {
    const Matrix& u = trace.u[l];
    const Matrix& s = trace.s[l];
    auto& lp = lp_sum_[l];
    auto& u2 = u2_sum_[l];
    auto& s2 = s2_sum_[l];
    auto& u1 = u_sum_[l];
    for (Index t = 0; t < u.rows(); ++t) {
      for (Index i = 0; i < u.cols(); ++i) {
        const double ui = u(t, i);
        const double si = s(t, i);
        const double q = ui * si;
        const auto k = static_cast<std::size_t>(i);
        lp[k] += 0.5 * q * q;
        u2[k] += ui * ui;
        s2[k] += si * si;
        u1[k] += ui;
      }
    }
    if (with_inputs && static_cast<std::size_t>(trace.h[l].cols()) == d_model_) {
      const Matrix& h = trace.h[l];
      for (Index t = 0; t < h.rows(); ++t) {
        for (Index c = 0; c < h.cols(); ++c) {
          h2_sum_[l][static_cast<std::size_t>(c)] += h(t, c) * h(t, c);
        }
      }
    }
  }
  token_count_ += trace.token_count();
}

void StatsAccumulator::merge(const StatsAccumulator& other) {
  if (!other.shaped()) return;
  if (!shaped()) {
    *this = other;
    return;
  }
  if (other.widths_ != widths_ || other.d_model_ != d_model_) {
    throw_invalid("merge: accumulator shapes differ");
  }
  if (other.fingerprint_ != fingerprint_) {
    throw_invalid("merge: model fingerprints differ");
  }
  add_into(lp_sum_, other.lp_sum_);
  add_into(u2_sum_, other.u2_sum_);
  add_into(s2_sum_, other.s2_sum_);
  add_into(u_sum_, other.u_sum_);
  add_into(h2_sum_, other.h2_sum_);
  token_count_ += other.token_count_;
}

StatsAccumulator merge(const StatsAccumulator& a, const StatsAccumulator& b) {
  StatsAccumulator out = a;
  out.merge(b);
  return out;
}

ChannelStats StatsAccumulator::finalize() const {
  if (token_count_ == 0) throw_invalid("finalize: no calibration tokens");
  const double inv = 1.0 / static_cast<double>(token_count_);
  ChannelStats out;
  out.lp = scaled(lp_sum_, inv);
  out.act_power = scaled(u2_sum_, inv);
  out.curvature = scaled(s2_sum_, inv);
  out.act_mean = scaled(u_sum_, inv);
  out.input_power = scaled(h2_sum_, inv);
  out.token_count = token_count_;
  out.fingerprint = fingerprint_;
  return out;
}

std::vector<TokenSequence> calibration_windows(const TokenSequence& corpus,
                                               std::size_t count,
                                               std::size_t length,
                                               std::uint64_t seed) {
  if (count == 0 || length == 0) {
    throw_invalid("calibration_windows: count and length must be positive");
  }
  if (corpus.size() < length + 1) {
    throw_invalid("calibration_windows: corpus shorter than one window");
  }
  Rng rng(seed);
  const std::size_t max_start = corpus.size() - length - 1;
  std::vector<TokenSequence> out;
  out.reserve(count);
  for (std::size_t k = 0; k < count; ++k) {
    const std::size_t start = rng.below(max_start + 1);
    out.emplace_back(corpus.begin() + static_cast<std::ptrdiff_t>(start),
                     corpus.begin() + static_cast<std::ptrdiff_t>(start + length + 1));
  }
  return out;
}

StatsAccumulator calibrate(const TinyModel& model,
                           const std::vector<TokenSequence>& windows) {
  return sharded_calibration<StatsAccumulator>(
      model, windows, [&] { return StatsAccumulator::for_model(model); });
}

// ---------------------------------------------------------------------------
// q cross statistics

QCrossAccumulator::QCrossAccumulator(std::vector<std::size_t> widths,
                                     ChannelSets core,
                                     std::uint64_t model_fingerprint,
                                     bool keep_core_series)
    : widths_(std::move(widths)),
      core_(std::move(core)),
      fingerprint_(model_fingerprint),
      keep_series_(keep_core_series) {
  if (core_.size() != widths_.size()) {
    throw_invalid("QCrossAccumulator: core must list every layer");
  }
  for (std::size_t l = 0; l < widths_.size(); ++l) {
    auto& c = core_[l];
    std::sort(c.begin(), c.end());
    c.erase(std::unique(c.begin(), c.end()), c.end());
    if (c.empty()) throw_invalid("QCrossAccumulator: empty core in layer " +
                                 std::to_string(l));
    if (c.back() >= widths_[l]) {
      throw_invalid("QCrossAccumulator: core index out of range in layer " +
                    std::to_string(l));
    }
  }
  q_sum_ = zero_table(widths_);
  q2_sum_ = zero_table(widths_);
  for (std::size_t l = 0; l < widths_.size(); ++l) {
    cross_sum_.push_back(Matrix::Zero(static_cast<Index>(widths_[l]),
                                      static_cast<Index>(core_[l].size())));
  }
  series_.resize(widths_.size());
  for (std::size_t l = 0; l < widths_.size(); ++l) series_[l].resize(core_[l].size());
}

void QCrossAccumulator::accumulate(const ChannelTrace& trace) {
  if (widths_.empty()) throw_invalid("accumulate_qcross: accumulator has no shape");
  check_trace_shape(trace, widths_);
  for (std::size_t l = 0; l < widths_.size(); ++l) {
    const Matrix q = trace.u[l].cwiseProduct(trace.s[l]);
    const auto& core = core_[l];
    Matrix core_q(q.rows(), static_cast<Index>(core.size()));
    for (std::size_t k = 0; k < core.size(); ++k) {
      core_q.col(static_cast<Index>(k)) = q.col(static_cast<Index>(core[k]));
    }
    for (Index t = 0; t < q.rows(); ++t) {
      for (Index j = 0; j < q.cols(); ++j) {
        const double v = q(t, j);
        q_sum_[l][static_cast<std::size_t>(j)] += v;
        q2_sum_[l][static_cast<std::size_t>(j)] += v * v;
        for (Index k = 0; k < core_q.cols(); ++k) cross_sum_[l](j, k) += v * core_q(t, k);
      }
    }
    if (keep_series_) {
      for (std::size_t k = 0; k < core.size(); ++k) {
        for (Index t = 0; t < q.rows(); ++t) {
          series_[l][k].push_back(core_q(t, static_cast<Index>(k)));
        }
      }
    }
  }
  token_count_ += trace.token_count();
}

void QCrossAccumulator::merge(const QCrossAccumulator& other) {
  if (other.widths_.empty()) return;
  if (widths_.empty()) {
    *this = other;
    return;
  }
  if (other.widths_ != widths_ || other.core_ != core_) {
    throw_invalid("merge_qcross: shapes or core sets differ");
  }
  if (other.fingerprint_ != fingerprint_) {
    throw_invalid("merge_qcross: model fingerprints differ");
  }
  add_into(q_sum_, other.q_sum_);
  add_into(q2_sum_, other.q2_sum_);
  for (std::size_t l = 0; l < widths_.size(); ++l) {
    cross_sum_[l] += other.cross_sum_[l];
    if (keep_series_) {
      for (std::size_t k = 0; k < series_[l].size(); ++k) {
        series_[l][k].insert(series_[l][k].end(), other.series_[l][k].begin(),
                             other.series_[l][k].end());
      }
    }
  }
  token_count_ += other.token_count_;
}

QCross QCrossAccumulator::finalize() const {
  if (token_count_ == 0) throw_invalid("finalize_qcross: no calibration tokens");
  const double inv = 1.0 / static_cast<double>(token_count_);
  QCross out;
  out.token_count = token_count_;
  out.fingerprint = fingerprint_;
  for (std::size_t l = 0; l < widths_.size(); ++l) {
    QCrossLayer layer;
    layer.core = core_[l];
    layer.mean_q = q_sum_[l];
    layer.mean_q2 = q2_sum_[l];
    for (double& v : layer.mean_q) v *= inv;
    for (double& v : layer.mean_q2) v *= inv;
    layer.mean_cross = cross_sum_[l] * inv;
    if (keep_series_) layer.core_series = series_[l];
    out.layers.push_back(std::move(layer));
  }
  return out;
}

QCrossAccumulator calibrate_qcross(const TinyModel& model,
                                   const std::vector<TokenSequence>& windows,
                                   const ChannelSets& core,
                                   bool keep_core_series) {
  return sharded_calibration<QCrossAccumulator>(model, windows, [&] {
    return QCrossAccumulator(model.ffn_widths(), core, fingerprint(model),
                             keep_core_series);
  });
}

Correlation pearson_from_moments(double mean_x, double mean_y, double mean_x2,
                                 double mean_y2, double mean_xy) {
  // Variances below this fraction of the raw second moment are rounding
  // residue of a constant series.
  constexpr double kRelativeFloor = 1e-12;
  const double var_x = mean_x2 - mean_x * mean_x;
  const double var_y = mean_y2 - mean_y * mean_y;
  if (mean_x2 <= 0.0 || mean_y2 <= 0.0 || var_x <= kRelativeFloor * mean_x2 ||
      var_y <= kRelativeFloor * mean_y2) {
    return {0.0, true};
  }
  const double cov = mean_xy - mean_x * mean_y;
  const double r = cov / std::sqrt(var_x * var_y);
  return {std::clamp(r, -1.0, 1.0), false};
}

Correlation pearson(const QCross& qcross, std::size_t layer, std::size_t j,
                    std::size_t core_channel) {
  if (layer >= qcross.layers.size()) throw_invalid("pearson: layer out of range");
  const QCrossLayer& ql = qcross.layers[layer];
  if (j >= ql.mean_q.size()) throw_invalid("pearson: channel out of range");
  const auto it = std::lower_bound(ql.core.begin(), ql.core.end(), core_channel);
  if (it == ql.core.end() || *it != core_channel) {
    throw_invalid("pearson: channel " + std::to_string(core_channel) +
                  " is not in the core of layer " + std::to_string(layer));
  }
  const auto k = static_cast<Index>(it - ql.core.begin());
  return pearson_from_moments(ql.mean_q[j], ql.mean_q[core_channel], ql.mean_q2[j],
                              ql.mean_q2[core_channel],
                              ql.mean_cross(static_cast<Index>(j), k));
}

}  // namespace nodelens
