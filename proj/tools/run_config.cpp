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

#include "run_config.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

#include "nodelens/common.hpp"
#include "nodelens/io.hpp"
#include "nodelens/model.hpp"
#include "nodelens/scar.hpp"

namespace nodelens::cli {

namespace {

std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return {};
  const auto b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

std::size_t to_size(const std::string& key, const std::string& v) {
  std::size_t out = 0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size() || v.empty()) {
    throw_invalid("config: " + key + " expects a non-negative integer, got '" + v + "'");
  }
  return out;
}

double to_real(const std::string& key, const std::string& v) {
  double out = 0.0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size() || v.empty()) {
    throw_invalid("config: " + key + " expects a number, got '" + v + "'");
  }
  return out;
}

std::vector<double> to_reals(const std::string& key, const std::string& v) {
  std::vector<double> out;
  std::stringstream in(v);
  std::string part;
  while (std::getline(in, part, ',')) out.push_back(to_real(key, trim(part)));
  if (out.empty()) throw_invalid("config: " + key + " expects a comma-separated list");
  return out;
}

std::string list(const std::vector<double>& v) {
  std::string out;
  for (std::size_t k = 0; k < v.size(); ++k) {
    if (k) out += ',';
    out += format_double(v[k]);
  }
  return out;
}

void require(bool ok, const std::string& what) {
  if (!ok) throw_invalid("config: " + what);
}

}  // namespace

void RunConfig::set(const std::string& raw_key, const std::string& raw_value) {
  const std::string key = trim(raw_key);
  const std::string v = trim(raw_value);
  if (key == "d_model") d_model = to_size(key, v);
  else if (key == "m_ffn") m_ffn = to_size(key, v);
  else if (key == "n_layers") n_layers = to_size(key, v);
  else if (key == "n_heads") n_heads = to_size(key, v);
  else if (key == "max_seq") max_seq = to_size(key, v);
  else if (key == "corpus") corpus = v;
  else if (key == "alt_corpus") alt_corpus = v;
  else if (key == "holdout") holdout = to_real(key, v);
  else if (key == "train_steps") train_steps = to_size(key, v);
  else if (key == "learning_rate") learning_rate = to_real(key, v);
  else if (key == "checkpoint_every") checkpoint_every = to_size(key, v);
  else if (key == "batch_size") batch_size = to_size(key, v);
  else if (key == "seq_len") seq_len = to_size(key, v);
  else if (key == "calib_sequences") calib_sequences = to_size(key, v);
  else if (key == "calib_length") calib_length = to_size(key, v);
  else if (key == "rho") rho = to_real(key, v);
  else if (key == "eta") eta = to_real(key, v);
  else if (key == "eta_read") eta_read = to_real(key, v);
  else if (key == "support_size") support_size = to_size(key, v);
  else if (key == "topk") topk = to_size(key, v);
  else if (key == "alpha") alpha = to_real(key, v);
  else if (key == "gamma") gamma = to_real(key, v);
  else if (key == "sparsity") sparsity = to_real(key, v);
  else if (key == "caps") caps = to_reals(key, v);
  else if (key == "variant") variant = v;
  else if (key == "method") method = v;
  else if (key == "seed") seed = to_size(key, v);
  else if (key == "trials") trials = to_size(key, v);
  else if (key == "hit_fractions") hit_fractions = to_reals(key, v);
  else if (key == "sweep_sparsities") sweep_sparsities = to_reals(key, v);
  else if (key == "block_len") block_len = to_size(key, v);
  else if (key == "eval_tokens") eval_tokens = to_size(key, v);
  else if (key == "halo_ablation_n") halo_ablation_n = to_size(key, v);
  else if (key == "out") out = v;
  else if (key == "threads") threads = to_size(key, v);
  else throw_invalid("config: unknown key '" + key + "'");
}

void RunConfig::validate() const {
  ModelConfig mc;
  mc.d_model = d_model;
  mc.m_ffn = m_ffn;
  mc.n_layers = n_layers;
  mc.n_heads = n_heads;
  mc.max_seq = max_seq;
  mc.vocab_size = 1;
  mc.validate();
  require(!corpus.empty(), "corpus path is empty");
  require(holdout > 0.0 && holdout < 1.0, "holdout must lie in (0, 1)");
  require(learning_rate > 0.0, "learning_rate must be positive");
  require(checkpoint_every > 0, "checkpoint_every must be positive");
  require(batch_size > 0, "batch_size must be positive");
  require(seq_len > 0 && seq_len <= max_seq, "seq_len must lie in [1, max_seq]");
  require(calib_sequences > 0, "calib_sequences must be positive");
  require(calib_length > 0 && calib_length <= max_seq, "calib_length must lie in [1, max_seq]");
  require(rho > 0.0 && rho < 1.0, "rho must lie in (0, 1)");
  require(eta > 0.0 && eta <= 1.0, "eta must lie in (0, 1]");
  require(eta_read > 0.0 && eta_read <= 1.0, "eta_read must lie in (0, 1]");
  require(support_size <= d_model, "support_size must not exceed d_model");
  require(topk >= 1, "topk must be at least 1");
  require(alpha > 0.0 && alpha <= 1.0, "alpha must lie in (0, 1]");
  require(gamma >= 1.0, "gamma must be at least 1");
  require(sparsity > 0.0 && sparsity < 1.0, "sparsity must lie in (0, 1)");
  require(caps.size() == 1 || caps.size() == n_layers, "caps needs 1 or n_layers values");
  for (double c : caps) require(c > 0.0 && c <= 1.0, "caps must lie in (0, 1]");
  parse_variant(variant);
  require(method == "scar" || method == "magnitude" || method == "wanda" ||
              method == "act-l2" || method == "random",
          "method must be one of scar, magnitude, wanda, act-l2, random");
  require(trials >= 1, "trials must be at least 1");
  for (double f : hit_fractions) require(f >= 0.0 && f <= 1.0, "hit_fractions must lie in [0, 1]");
  for (double s : sweep_sparsities) {
    require(s > 0.0 && s < 1.0, "sweep_sparsities must lie in (0, 1)");
  }
  require(block_len > 0 && block_len <= max_seq, "block_len must lie in [1, max_seq]");
  // Learned positions past seq_len never receive a gradient.
  require(block_len <= seq_len, "block_len must not exceed seq_len");
  require(calib_length <= seq_len, "calib_length must not exceed seq_len");
  require(!out.empty(), "out directory is empty");
}

std::string RunConfig::to_text() const {
  std::ostringstream o;
  o << "d_model=" << d_model << "\nm_ffn=" << m_ffn << "\nn_layers=" << n_layers
    << "\nn_heads=" << n_heads << "\nmax_seq=" << max_seq << "\ncorpus=" << corpus
    << "\nalt_corpus=" << alt_corpus << "\nholdout=" << format_double(holdout)
    << "\ntrain_steps=" << train_steps << "\nlearning_rate=" << format_double(learning_rate)
    << "\ncheckpoint_every=" << checkpoint_every << "\nbatch_size=" << batch_size
    << "\nseq_len=" << seq_len << "\ncalib_sequences=" << calib_sequences
    << "\ncalib_length=" << calib_length << "\nrho=" << format_double(rho)
    << "\neta=" << format_double(eta) << "\neta_read=" << format_double(eta_read)
    << "\nsupport_size=" << support_size << "\ntopk=" << topk
    << "\nalpha=" << format_double(alpha) << "\ngamma=" << format_double(gamma)
    << "\nsparsity=" << format_double(sparsity) << "\ncaps=" << list(caps)
    << "\nvariant=" << variant << "\nmethod=" << method << "\nseed=" << seed
    << "\ntrials=" << trials << "\nhit_fractions=" << list(hit_fractions)
    << "\nsweep_sparsities=" << list(sweep_sparsities) << "\nblock_len=" << block_len
    << "\neval_tokens=" << eval_tokens << "\nhalo_ablation_n=" << halo_ablation_n
    << "\nout=" << out << "\nthreads=" << threads << "\n";
  return o.str();
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw_invalid("config: cannot open '" + path + "'");
  RunConfig config;
  std::string line;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    const std::string t = trim(line);
    if (t.empty() || t.front() == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) {
      throw_invalid("config: line " + std::to_string(number) + " is not key=value");
    }
    config.set(t.substr(0, eq), t.substr(eq + 1));
  }
  return config;
}

}  // namespace nodelens::cli
