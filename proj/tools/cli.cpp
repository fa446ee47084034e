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

#include "cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <thread>

#include "nodelens/analysis.hpp"
#include "nodelens/calib.hpp"
#include "nodelens/eval.hpp"
#include "nodelens/halo.hpp"
#include "nodelens/io.hpp"
#include "nodelens/model.hpp"
#include "nodelens/redundancy.hpp"
#include "nodelens/report.hpp"
#include "nodelens/scar.hpp"
#include "nodelens/tokenizer.hpp"
#include "nodelens/train.hpp"
#include "run_config.hpp"

namespace nodelens::cli {

namespace fs = std::filesystem;

namespace {

struct Flags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<double> rho, eta, alpha, gamma, sparsity, caps;
  std::optional<std::size_t> topk, threads;
  std::optional<std::string> variant, method, out;
  std::string stats, mask, model;
  bool ablations = false;
};

// Everything a subcommand needs: resolved config, output directory, data.
class Session {
 public:
  Session(RunConfig config, std::string command, const Flags& flags)
      : cfg_(std::move(config)), command_(std::move(command)), flags_(flags) {
    out_ = cfg_.out;
    fs::create_directories(out_);
  }

  const RunConfig& cfg() const { return cfg_; }
  const fs::path& out() const { return out_; }

  void load_data() {
    const std::string text = read_text_file(cfg_.corpus);
    note_input(cfg_.corpus);
    std::string vocab_text = text;
    if (!cfg_.alt_corpus.empty() && fs::exists(cfg_.alt_corpus)) {
      alt_text_ = read_text_file(cfg_.alt_corpus);
      note_input(cfg_.alt_corpus);
      vocab_text += alt_text_;
    }
    tokenizer_ = CharTokenizer::from_corpus(vocab_text);
    const TokenSequence all = tokenizer_.encode(text);
    const auto split = static_cast<std::size_t>(
        static_cast<double>(all.size()) * (1.0 - cfg_.holdout));
    train_.assign(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(split));
    eval_.assign(all.begin() + static_cast<std::ptrdiff_t>(split), all.end());
    if (!alt_text_.empty()) alt_ = tokenizer_.encode(alt_text_);
  }

  const CharTokenizer& tokenizer() const { return tokenizer_; }
  const TokenSequence& train_tokens() const { return train_; }
  const TokenSequence& eval_tokens() const { return eval_; }
  const TokenSequence& alt_tokens() const { return alt_; }

  ModelConfig model_config() const {
    ModelConfig mc;
    mc.d_model = cfg_.d_model;
    mc.m_ffn = cfg_.m_ffn;
    mc.n_layers = cfg_.n_layers;
    mc.n_heads = cfg_.n_heads;
    mc.max_seq = cfg_.max_seq;
    mc.vocab_size = tokenizer_.vocab_size();
    mc.seed = cfg_.seed;
    return mc;
  }

  fs::path model_path() const {
    return flags_.model.empty() ? out_ / "model.nlck" : fs::path(flags_.model);
  }
  fs::path stats_path() const {
    return flags_.stats.empty() ? out_ / "stats.nls" : fs::path(flags_.stats);
  }
  fs::path mask_path() const {
    return flags_.mask.empty() ? out_ / "mask.txt" : fs::path(flags_.mask);
  }

  TinyModel load_model() {
    const fs::path p = model_path();
    Checkpoint c = read_checkpoint(p);
    note_input(p);
    return std::move(c.model);
  }

  StatsFile load_stats() {
    const fs::path p = stats_path();
    StatsFile f = read_stats(p);
    note_input(p);
    for (const auto& w : f.warnings) warn(w);
    return f;
  }

  PruneMask load_mask() {
    const fs::path p = mask_path();
    std::vector<std::string> warnings;
    PruneMask m = read_mask(p, &warnings);
    note_input(p);
    for (const auto& w : warnings) warn(w);
    return m;
  }

  std::vector<TokenSequence> calibration_set(const TokenSequence& corpus) const {
    return calibration_windows(corpus, cfg_.calib_sequences, cfg_.calib_length, cfg_.seed);
  }

  EvalSet eval_set() const { return make_eval_set(eval_, cfg_.block_len, cfg_.eval_tokens); }

  void note_input(const fs::path& p) {
    const auto bytes = read_file_bytes(p);
    inputs_.emplace_back(p.string(), fnv1a64(std::span<const std::byte>(bytes)));
  }
  void wrote(const fs::path& p) { outputs_.push_back(p.filename().string()); }
  void warn(const std::string& w) {
    std::cerr << "warning: " << w << "\n";
    warnings_.push_back(w);
  }

  void tsv(const Table& t, const std::string& name) {
    emit_tsv(t, out_ / name);
    wrote(out_ / name);
  }
  void svg(const LineChart& c, const std::string& name) {
    emit_svg(c, out_ / name);
    wrote(out_ / name);
  }

  void write_manifest() {
    std::ostringstream m;
    m << "tool_version=" << tool_version() << "\n";
    m << "command=" << command_ << "\n";
    m << "seed=" << cfg_.seed << "\n";
    m << "threads=" << worker_count() << "\n";
    for (const auto& [path, hash] : inputs_) {
      m << "input=" << path << " fnv1a64=" << std::hex << hash << std::dec << "\n";
    }
    for (const auto& o : outputs_) m << "output=" << o << "\n";
    for (const auto& w : warnings_) m << "warning=" << w << "\n";
    m << "[config]\n" << cfg_.to_text();
    write_text_atomic(out_ / ("manifest_" + command_ + ".txt"), m.str());
  }

 private:
  RunConfig cfg_;
  std::string command_;
  Flags flags_;
  fs::path out_;
  CharTokenizer tokenizer_;
  std::string alt_text_;
  TokenSequence train_, eval_, alt_;
  std::vector<std::pair<std::string, std::uint64_t>> inputs_;
  std::vector<std::string> outputs_;
  std::vector<std::string> warnings_;
};

Cell opt_cell(const std::optional<double>& v) {
  return v ? Cell(*v) : Cell(std::string("nan"));
}

Cell size_cell(std::size_t v) { return Cell(static_cast<long long>(v)); }

SupernodeSet supernodes_of(const Session& s, const ChannelStats& stats) {
  return select_supernodes(stats, s.cfg().rho);
}

HaloOptions halo_options(const RunConfig& cfg) {
  HaloOptions o;
  o.support_size = cfg.support_size;
  o.eta = cfg.eta;
  o.eta_read = cfg.eta_read;
  return o;
}

RedundancyOptions redundancy_options(const RunConfig& cfg) {
  RedundancyOptions o;
  o.k = cfg.topk;
  o.alpha = cfg.alpha;
  o.gamma = cfg.gamma;
  return o;
}

void check_model_matches(const TinyModel& model, const ChannelStats& stats) {
  if (fingerprint(model) != stats.fingerprint) {
    throw FormatError(FormatErrorKind::kValidation,
                      "statistics were gathered on a different model (fingerprint mismatch)");
  }
}

// ---------------------------------------------------------------------------
// train

void cmd_train(Session& s) {
  s.load_data();
  const RunConfig& cfg = s.cfg();
  TrainOptions opt;
  opt.steps = cfg.train_steps;
  opt.learning_rate = cfg.learning_rate;
  opt.checkpoint_every = cfg.checkpoint_every;
  opt.batch_size = cfg.batch_size;
  opt.seq_len = cfg.seq_len;
  opt.seed = cfg.seed;
  const TinyModel init = init_model(s.model_config());
  const TrainResult result = train_toy(init, s.train_tokens(), opt, [&](std::size_t step, double loss) {
    if (step % 100 == 0) std::cerr << "step " << step << " loss " << loss << "\n";
  });
  for (const auto& c : result.checkpoints) {
    char name[64];
    std::snprintf(name, sizeof(name), "checkpoints/step_%06zu.nlck", c.step);
    write_checkpoint(c, s.out() / name);
    s.wrote(s.out() / name);
  }
  write_checkpoint({cfg.train_steps, result.final_model}, s.out() / "model.nlck");
  s.wrote(s.out() / "model.nlck");
  Table t;
  t.columns = {"step", "loss"};
  for (std::size_t k = 0; k < result.losses.size(); ++k) t.add_row({size_cell(k), result.losses[k]});
  s.tsv(t, "train_loss.tsv");
  const auto ppl = blockwise_perplexity(result.final_model, s.eval_tokens(), cfg.block_len);
  std::cout << "trained " << cfg.train_steps << " steps; held-out perplexity "
            << ppl.perplexity << "\n";
}

// ---------------------------------------------------------------------------
// calibrate

StatsFile make_stats_file(const Session& s, const TinyModel& model,
                          const std::vector<TokenSequence>& windows,
                          const std::string& corpus_name, bool with_qcross) {
  StatsFile f;
  f.model_name = "tiny-swiglu";
  f.d_model = model.config.d_model;
  f.stats = calibrate(model, windows).finalize();
  f.calibration = "corpus=" + corpus_name + ";sequences=" + std::to_string(windows.size()) +
                  ";length=" + std::to_string(s.cfg().calib_length) +
                  ";seed=" + std::to_string(s.cfg().seed);
  f.wdown_abs = wdown_abs_of(model);
  if (with_qcross) {
    const SupernodeSet core = select_supernodes(f.stats, s.cfg().rho);
    f.qcross = calibrate_qcross(model, windows, core.layers).finalize();
  }
  return f;
}

void cmd_calibrate(Session& s) {
  s.load_data();
  const TinyModel model = s.load_model();
  const auto windows = s.calibration_set(s.train_tokens());
  const StatsFile f = make_stats_file(s, model, windows, s.cfg().corpus, true);
  write_stats(f, s.stats_path());
  s.wrote(s.stats_path());
  if (!s.alt_tokens().empty()) {
    const auto alt_windows = s.calibration_set(s.alt_tokens());
    const StatsFile alt = make_stats_file(s, model, alt_windows, s.cfg().alt_corpus, false);
    write_stats(alt, s.out() / "stats_alt.nls");
    s.wrote(s.out() / "stats_alt.nls");
  }
  std::cout << "calibrated on " << f.stats.token_count << " tokens\n";
}

// ---------------------------------------------------------------------------
// analyze

void cmd_analyze(Session& s) {
  const RunConfig& cfg = s.cfg();
  const StatsFile file = s.load_stats();
  const ChannelStats& stats = file.stats;
  const std::size_t layers = stats.n_layers();
  std::optional<TinyModel> model;
  if (fs::exists(s.model_path())) {
    model = s.load_model();
    check_model_matches(*model, stats);
  }
  const SupernodeSet core = supernodes_of(s, stats);

  // Concentration.
  const auto grid = default_percentile_grid();
  const ConcentrationReport conc = concentration_report(stats, cfg.rho, grid);
  Table t;
  t.columns = {"layer", "width", "supernodes", "top_mass", "max_mean_ratio"};
  for (std::size_t l = 0; l < layers; ++l) {
    t.add_row({size_cell(l), size_cell(stats.lp[l].size()), size_cell(core.layers[l].size()),
               opt_cell(conc.top_mass[l]), opt_cell(conc.max_mean[l])});
  }
  s.tsv(t, "concentration.tsv");

  Table curve;
  curve.columns = {"percentile"};
  for (std::size_t l = 0; l < layers; ++l) curve.columns.push_back("layer" + std::to_string(l));
  for (std::size_t k = 0; k < grid.size(); ++k) {
    std::vector<Cell> row{grid[k]};
    for (std::size_t l = 0; l < layers; ++l) row.emplace_back(conc.curve.mass[l][k]);
    curve.add_row(std::move(row));
  }
  s.tsv(curve, "cumulative.tsv");

  Table sup;
  sup.columns = {"layer", "channel", "lp", "act_power", "curvature"};
  for (std::size_t l = 0; l < layers; ++l) {
    for (std::size_t c : core.layers[l]) {
      sup.add_row({size_cell(l), size_cell(c), stats.lp[l][c], stats.act_power[l][c],
                   stats.curvature[l][c]});
    }
  }
  s.tsv(sup, "supernodes.tsv");

  const FactorMasses fm = factor_masses(stats, cfg.rho);
  Table factors;
  factors.columns = {"metric", "median", "pooled"};
  for (std::size_t l = 0; l < layers; ++l) factors.columns.push_back("layer" + std::to_string(l));
  const char* names[] = {"act_power", "curvature", "factorized", "exact_lp"};
  for (std::size_t k = 0; k < 4; ++k) {
    std::vector<Cell> row{std::string(names[k]), opt_cell(fm.median[k]), opt_cell(fm.pooled[k])};
    for (std::size_t l = 0; l < layers; ++l) row.push_back(opt_cell(fm.per_layer[l][k]));
    factors.add_row(std::move(row));
  }
  s.tsv(factors, "factors.tsv");

  // Halo: from the model when present, else from the WDOWN_ABS section.
  HaloSet halos;
  if (model) {
    halos = build_halo(*model, core, halo_options(cfg));
  } else if (!file.wdown_abs.empty()) {
    halos = build_write_halo(wdown_from_abs(file), core, halo_options(cfg));
  } else {
    s.warn("no model and no WDOWN_ABS section; skipping halo analysis");
  }

  std::optional<RedundancyTable> red;
  if (!halos.layers.empty() && file.qcross) {
    red = build_redundancy_table(*file.qcross, core, halos, redundancy_options(cfg));
  } else if (!halos.layers.empty()) {
    s.warn("stats file has no QCROSS section; skipping redundancy analysis");
  }

  if (!halos.layers.empty()) {
    Table h;
    h.columns = {"layer", "channel", "conn", "in_write_halo", "redundancy", "protect"};
    Table summary;
    summary.columns = {"layer", "support_size", "halo_size", "mean_red_halo", "mean_red_nonhalo"};
    for (std::size_t l = 0; l < layers; ++l) {
      const HaloLayer& hl = halos.layers[l];
      std::vector<bool> in_halo(hl.conn.size(), false), in_core(hl.conn.size(), false);
      for (std::size_t c : hl.write_halo) in_halo[c] = true;
      for (std::size_t c : core.layers[l]) in_core[c] = true;
      double rh = 0, rn = 0;
      std::size_t nh = 0, nn = 0;
      for (std::size_t c = 0; c < hl.conn.size(); ++c) {
        const double r = red ? red->layers[l].redundancy_all[c] : 0.0;
        const double p = red ? red->layers[l].protect[c] : 1.0;
        h.add_row({size_cell(l), size_cell(c), hl.conn[c],
                   size_cell(in_halo[c] ? 1 : 0), r, p});
        if (in_core[c]) continue;
        if (in_halo[c]) {
          rh += r;
          ++nh;
        } else {
          rn += r;
          ++nn;
        }
      }
      summary.add_row({size_cell(l), size_cell(hl.support.size()), size_cell(hl.write_halo.size()),
                       nh ? rh / static_cast<double>(nh) : 0.0,
                       nn ? rn / static_cast<double>(nn) : 0.0});
    }
    s.tsv(h, "halo.tsv");
    s.tsv(summary, "halo_summary.tsv");
  }

  if (model) {
    const MechanismControls mc = mechanism_controls(stats, *model);
    Table m;
    m.columns = {"layer", "act_power", "write_norm", "up_norm", "gate_norm"};
    for (std::size_t l = 0; l < layers; ++l) {
      std::vector<Cell> row{size_cell(l)};
      for (const auto& c : mc.per_layer[l]) row.emplace_back(c.value);
      m.add_row(std::move(row));
    }
    s.tsv(m, "mechanism.tsv");

    s.load_data();
    auto windows = s.calibration_set(s.train_tokens());
    for (auto& w : windows) w.pop_back();
    Table rd;
    rd.columns = {"layer", "bin", "mean_abs_delta_u", "channels"};
    for (std::size_t l = 0; l + 1 < layers; ++l) {
      const auto rep = read_dependence_report(*model, l, halos.layers[l].support, windows, 10);
      for (std::size_t b = 0; b < rep.bin_mean.size(); ++b) {
        rd.add_row({size_cell(l), size_cell(b), rep.bin_mean[b], size_cell(rep.bin_count[b])});
      }
    }
    if (!rd.rows.empty()) s.tsv(rd, "read_dependence.tsv");
  }

  const fs::path alt = s.out() / "stats_alt.nls";
  if (fs::exists(alt)) {
    const StatsFile other = read_stats(alt);
    s.note_input(alt);
    if (other.stats.widths() == stats.widths()) {
      const SupernodeSet other_core = select_supernodes(other.stats, cfg.rho);
      Table j;
      j.columns = {"layer", "jaccard"};
      for (std::size_t l = 0; l < layers; ++l) {
        j.add_row({size_cell(l), jaccard(core.layers[l], other_core.layers[l])});
      }
      s.tsv(j, "domain_jaccard.tsv");
    }
  }
  std::cout << "analyzed " << layers << " layers; " << core.total() << " supernodes\n";
}

// ---------------------------------------------------------------------------
// prune

PruneMask build_mask(Session& s, const TinyModel& model, const StatsFile& file,
                     const std::string& method, double sparsity) {
  const RunConfig& cfg = s.cfg();
  const ChannelStats& stats = file.stats;
  const SupernodeSet core = supernodes_of(s, stats);
  PruneMask mask;
  if (method == "scar") {
    const ScarVariant variant = parse_variant(cfg.variant);
    LayerScores protect, conn;
    if (variant != ScarVariant::kLp) {
      if (!file.qcross) {
        throw FormatError(FormatErrorKind::kMissingSection,
                          "SCAR variant '" + cfg.variant + "' needs the QCROSS section");
      }
      const HaloSet halos = build_halo(model, core, halo_options(cfg));
      const RedundancyTable red =
          build_redundancy_table(*file.qcross, core, halos, redundancy_options(cfg));
      for (std::size_t l = 0; l < halos.layers.size(); ++l) {
        protect.push_back(red.layers[l].protect);
        conn.push_back(halos.layers[l].conn);
      }
    }
    const LayerScores scores = scar_scores(variant, stats, &protect, &conn);
    mask = select_mask(scores, core.layers, sparsity, cfg.caps);
    mask.method = "scar-" + std::string(to_string(variant));
    mask.aggregation = "lp";
  } else {
    const BaselineMethod b = parse_baseline(method);
    const LayerScores scores = baseline_scores(b, model, &stats, cfg.seed);
    mask = select_mask(scores, {}, sparsity, cfg.caps);
    mask.method = std::string(to_string(b));
    mask.aggregation = b == BaselineMethod::kMagnitude ? "l2(up row, gate row, down column)"
                       : b == BaselineMethod::kWanda   ? "sum |w| * rms(input)"
                       : b == BaselineMethod::kActL2   ? "rms(u)"
                                                       : "uniform";
  }
  mask.seed = cfg.seed;
  mask.fingerprint = stats.fingerprint;
  mask.hit_rate = hit_rate(mask.pruned, core);
  mask.supernode_reference = core.layers;
  return mask;
}

void cmd_prune(Session& s) {
  const TinyModel model = s.load_model();
  const StatsFile file = s.load_stats();
  check_model_matches(model, file.stats);
  const PruneMask mask = build_mask(s, model, file, s.cfg().method, s.cfg().sparsity);
  write_mask(mask, s.mask_path());
  s.wrote(s.mask_path());
  std::cout << mask.method << ": pruned " << mask.total_pruned() << " channels, hit-rate "
            << format_double(*mask.hit_rate) << "\n";
}

// ---------------------------------------------------------------------------
// eval

void run_ablations(Session& s, const TinyModel& model, const StatsFile& file,
                   const EvalSet& set) {
  const RunConfig& cfg = s.cfg();
  const ChannelStats& stats = file.stats;
  const SupernodeSet core = supernodes_of(s, stats);

  const LpValidation lv = lp_validation_bins(model, stats, set, 10);
  if (lv.weak_signal) s.warn("LP signal is flat (untrained model?); bins may be uninformative");
  Table bins;
  bins.columns = {"bin", "mean_delta_nll", "channels"};
  for (std::size_t b = 0; b < lv.bin_mean.size(); ++b) {
    bins.add_row({size_cell(b), lv.bin_mean[b], size_cell(lv.bin_count[b])});
  }
  s.tsv(bins, "lp_bins.tsv");

  const CriticalityResult crit = supernode_criticality(model, core, set, cfg.trials, cfg.seed);
  const CriticalityResult mr =
      mean_replacement_experiment(model, core, stats, set, cfg.trials, cfg.seed);
  Table arms;
  arms.columns = {"experiment", "trial", "seed", "core_delta_nll", "random_delta_nll"};
  for (std::size_t t = 0; t < cfg.trials; ++t) {
    arms.add_row({std::string("zero_ablation"), size_cell(t),
                  std::to_string(crit.random.seeds[t]), crit.core.delta[t],
                  crit.random.delta[t]});
  }
  for (std::size_t t = 0; t < cfg.trials; ++t) {
    arms.add_row({std::string("mean_replacement"), size_cell(t),
                  std::to_string(mr.random.seeds[t]), mr.core.delta[t],
                  mr.random.delta[t]});
  }
  s.tsv(arms, "criticality.tsv");

  const HaloSet halos = build_halo(model, core, halo_options(cfg));
  std::size_t n = cfg.halo_ablation_n;
  for (const auto& h : halos.layers) n = std::min(n, h.write_halo.size());
  const HaloAblation ha =
      conditional_halo_ablation(model, core, halos, stats, set, n, cfg.trials, cfg.seed);
  if (ha.fallback_matches > 0) {
    s.warn(std::to_string(ha.fallback_matches) + " LP-decile matches used the nearest decile");
  }
  Table halo;
  halo.columns = {"trial", "halo_delta_nll", "matched_delta_nll", "core_delta_nll", "per_layer"};
  for (std::size_t t = 0; t < cfg.trials; ++t) {
    halo.add_row({size_cell(t), ha.halo.delta[t], ha.matched.delta[t], ha.core.delta[t],
                  size_cell(n)});
  }
  s.tsv(halo, "halo_ablation.tsv");
}

void cmd_eval(Session& s, bool ablations) {
  s.load_data();
  const TinyModel model = s.load_model();
  const EvalSet set = s.eval_set();
  Table t;
  t.columns = {"name", "method", "sparsity", "pruned", "hit_rate", "ppl_masked", "ppl_removed"};
  const NllSummary dense = model_perplexity(model, set);
  t.add_row({std::string("dense"), std::string("none"), 0.0, size_cell(0), 0.0, dense.perplexity,
             dense.perplexity});
  if (fs::exists(s.mask_path())) {
    const PruneMask mask = s.load_mask();
    if (!mask.fingerprint_missing && mask.fingerprint != fingerprint(model)) {
      throw FormatError(FormatErrorKind::kValidation, "mask was built for a different model");
    }
    const NllSummary masked = masked_perplexity(model, mask.pruned, set);
    const NllSummary removed = model_perplexity(remove_channels(model, mask.pruned), set);
    t.add_row({s.mask_path().filename().string(), mask.method, mask.sparsity,
               size_cell(mask.total_pruned()), mask.hit_rate.value_or(0.0), masked.perplexity,
               removed.perplexity});
    std::cout << mask.method << " perplexity " << masked.perplexity << " (dense "
              << dense.perplexity << "), hit-rate " << format_double(mask.hit_rate.value_or(0.0))
              << "\n";
  } else {
    std::cout << "dense perplexity " << dense.perplexity << "\n";
  }
  s.tsv(t, "eval.tsv");
  if (ablations) {
    const StatsFile file = s.load_stats();
    check_model_matches(model, file.stats);
    run_ablations(s, model, file, set);
  }
}

// ---------------------------------------------------------------------------
// sweep

void cmd_sweep(Session& s) {
  s.load_data();
  const RunConfig& cfg = s.cfg();
  const TinyModel model = s.load_model();
  const StatsFile file = s.load_stats();
  check_model_matches(model, file.stats);
  const EvalSet set = s.eval_set();
  Table t;
  LineChart chart;
  chart.y_label = "perplexity";
  Series series;
  if (cfg.method == "random") {
    const SupernodeSet core = supernodes_of(s, file.stats);
    const SweepCurve curve = dose_response(model, core, set, cfg.sparsity, cfg.hit_fractions,
                                           cfg.trials, cfg.caps, cfg.seed);
    t.columns = {"hit_fraction", "mean_ppl", "std_ppl", "trials", "pruned"};
    for (const auto& p : curve.points) {
      t.add_row({p.x, p.mean, p.stddev, size_cell(p.values.size()), size_cell(p.pruned)});
      series.x.push_back(p.x);
      series.y.push_back(p.mean);
    }
    chart.title = "Dose-response at sparsity " + format_double(cfg.sparsity);
    chart.x_label = "forced supernode hit fraction";
    chart.log_y = true;
    series.name = "random masks";
    std::cout << "dose-response Spearman " << curve.spearman.value << "\n";
  } else {
    t.columns = {"sparsity", "ppl", "hit_rate", "pruned"};
    for (double sp : cfg.sweep_sparsities) {
      const PruneMask mask = build_mask(s, model, file, cfg.method, sp);
      const double ppl = masked_perplexity(model, mask.pruned, set).perplexity;
      t.add_row({sp, ppl, *mask.hit_rate, size_cell(mask.total_pruned())});
      series.x.push_back(sp);
      series.y.push_back(ppl);
      series.name = mask.method;
    }
    chart.title = "Perplexity against sparsity";
    chart.x_label = "sparsity";
    chart.log_y = true;
  }
  s.tsv(t, "sweep.tsv");
  chart.series.push_back(std::move(series));
  s.svg(chart, "sweep.svg");
}

// ---------------------------------------------------------------------------
// emergence

void cmd_emergence(Session& s) {
  s.load_data();
  const fs::path dir = s.out() / "checkpoints";
  if (!fs::is_directory(dir)) throw_invalid("no checkpoints under " + dir.string() + "; run train first");
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.path().extension() == ".nlck") files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  std::vector<Checkpoint> checkpoints;
  for (const auto& f : files) {
    checkpoints.push_back(read_checkpoint(f));
    s.note_input(f);
  }
  std::sort(checkpoints.begin(), checkpoints.end(),
            [](const Checkpoint& a, const Checkpoint& b) { return a.step < b.step; });
  const auto windows = s.calibration_set(s.train_tokens());
  const auto track = emergence_track(checkpoints, windows, s.cfg().rho);
  Table t;
  t.columns = {"step", "median_top_mass", "median_max_mean", "median_jaccard_vs_final"};
  for (const auto& p : track) {
    t.add_row({size_cell(p.step), p.median_top_mass, p.median_max_mean, p.median_jaccard});
  }
  s.tsv(t, "emergence.tsv");
}

// ---------------------------------------------------------------------------
// report

std::optional<Table> read_table(const fs::path& p) {
  if (!fs::exists(p)) return std::nullopt;
  const auto bytes = read_file_bytes(p);
  return parse_tsv(std::string(reinterpret_cast<const char*>(bytes.data()), bytes.size()));
}

double number(const Cell& c) {
  if (const auto* d = std::get_if<double>(&c)) return *d;
  if (const auto* i = std::get_if<long long>(&c)) return static_cast<double>(*i);
  return std::numeric_limits<double>::quiet_NaN();
}

LineChart chart_from(const Table& t, std::size_t x_col, const std::vector<std::size_t>& y_cols,
                     std::string title, std::string x_label, std::string y_label) {
  LineChart c;
  c.title = std::move(title);
  c.x_label = std::move(x_label);
  c.y_label = std::move(y_label);
  for (std::size_t y : y_cols) {
    Series s;
    s.name = t.columns[y];
    for (const auto& row : t.rows) {
      s.x.push_back(number(row[x_col]));
      s.y.push_back(number(row[y]));
    }
    c.series.push_back(std::move(s));
  }
  return c;
}

void cmd_report(Session& s) {
  std::size_t rendered = 0;
  auto render = [&](const std::string& tsv, auto&& make) {
    if (auto t = read_table(s.out() / tsv)) {
      s.note_input(s.out() / tsv);
      if (t->rows.empty()) return;
      LineChart c = make(*t);
      s.svg(c, fs::path(tsv).replace_extension(".svg").string());
      ++rendered;
    }
  };
  render("cumulative.tsv", [](const Table& t) {
    std::vector<std::size_t> ys;
    for (std::size_t k = 1; k < t.columns.size(); ++k) ys.push_back(k);
    LineChart c = chart_from(t, 0, ys, "Cumulative LP mass", "top channels (%)", "share of LP mass");
    c.log_x = true;
    return c;
  });
  render("lp_bins.tsv", [](const Table& t) {
    return chart_from(t, 0, {1}, "Single-channel ablation by LP percentile bin", "LP bin",
                      "mean delta NLL (nats/token)");
  });
  render("emergence.tsv", [](const Table& t) {
    return chart_from(t, 0, {1, 3}, "Concentration during training", "training step", "value");
  });
  render("train_loss.tsv", [](const Table& t) {
    return chart_from(t, 0, {1}, "Training loss", "step", "loss (nats/token)");
  });
  render("sweep.tsv", [](const Table& t) {
    LineChart c = chart_from(t, 0, {1}, "Perplexity sweep", t.columns[0], "perplexity");
    c.log_y = true;
    return c;
  });
  if (rendered == 0) throw_invalid("report: no tabular artifacts found under " + s.out().string());
  std::cout << "rendered " << rendered << " charts\n";
}

int exit_code_for(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kInvalidArgument: return kExitConfig;
    case ErrorKind::kInfeasible: return kExitInfeasible;
    case ErrorKind::kFormat: return kExitFormat;
    case ErrorKind::kNumerical: return kExitNumerical;
    case ErrorKind::kIo: return kExitConfig;
  }
  return kExitConfig;
}

}  // namespace

int run(const std::vector<std::string>& args) {
  CLI::App app{"nodelens: supernode analysis and SCAR pruning on a toy SwiGLU model"};
  app.require_subcommand(1, 1);
  app.fallthrough();
  Flags flags;
  app.add_option("--config", flags.config, "key=value run configuration");
  app.add_option("--seed", flags.seed, "base random seed");
  app.add_option("--rho", flags.rho, "supernode fraction per layer");
  app.add_option("--eta", flags.eta, "write-halo fraction");
  app.add_option("--topk", flags.topk, "k for the top-k redundancy mean");
  app.add_option("--alpha", flags.alpha, "protection floor");
  app.add_option("--gamma", flags.gamma, "protection exponent");
  app.add_option("--sparsity", flags.sparsity, "fraction of FFN channels to prune");
  app.add_option("--variant", flags.variant, "SCAR variant")->check(CLI::IsMember({"lp", "prot", "conn"}));
  app.add_option("--method", flags.method, "pruning method")
      ->check(CLI::IsMember({"scar", "magnitude", "wanda", "act-l2", "random"}));
  app.add_option("--caps", flags.caps, "per-layer pruning cap");
  app.add_option("--out", flags.out, "output directory (NODELENS_OUT overrides)");
  app.add_option("--stats", flags.stats, "stats file path");
  app.add_option("--mask", flags.mask, "mask file path");
  app.add_option("--model", flags.model, "model checkpoint path");
  app.add_option("--threads", flags.threads, "worker thread cap");

  std::map<std::string, CLI::App*> subs;
  for (const char* name : {"train", "calibrate", "analyze", "prune", "eval", "sweep", "emergence", "report"}) {
    subs[name] = app.add_subcommand(name);
  }
  subs["train"]->description("train the toy model and write checkpoints");
  subs["calibrate"]->description("accumulate channel statistics into a stats file");
  subs["analyze"]->description("concentration, halo, redundancy and mechanism reports");
  subs["prune"]->description("build a prune mask");
  subs["eval"]->description("perplexity of the dense model and the current mask");
  subs["eval"]->add_flag("--ablations", flags.ablations, "also run the ablation experiments");
  subs["sweep"]->description("dose-response (method random) or sparsity sweep");
  subs["emergence"]->description("track concentration across training checkpoints");
  subs["report"]->description("render charts from stored tables");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitConfig;
  }

  try {
    RunConfig cfg = flags.config.empty() ? RunConfig{} : load_run_config(flags.config);
    if (flags.seed) cfg.seed = *flags.seed;
    if (flags.rho) cfg.rho = *flags.rho;
    if (flags.eta) cfg.eta = *flags.eta;
    if (flags.topk) cfg.topk = *flags.topk;
    if (flags.alpha) cfg.alpha = *flags.alpha;
    if (flags.gamma) cfg.gamma = *flags.gamma;
    if (flags.sparsity) cfg.sparsity = *flags.sparsity;
    if (flags.caps) cfg.caps = {*flags.caps};
    if (flags.variant) cfg.variant = *flags.variant;
    if (flags.method) cfg.method = *flags.method;
    if (flags.out) cfg.out = *flags.out;
    if (flags.threads) cfg.threads = *flags.threads;
    if (const char* env = std::getenv("NODELENS_OUT"); env && *env) cfg.out = env;
    cfg.validate();
    set_worker_count(cfg.threads > 0 ? cfg.threads
                                     : std::max(1u, std::thread::hardware_concurrency()));

    std::string command;
    for (const auto& [name, sub] : subs) {
      if (sub->parsed()) command = name;
    }
    Session session(cfg, command, flags);
    if (command == "train") cmd_train(session);
    else if (command == "calibrate") cmd_calibrate(session);
    else if (command == "analyze") cmd_analyze(session);
    else if (command == "prune") cmd_prune(session);
    else if (command == "eval") cmd_eval(session, flags.ablations);
    else if (command == "sweep") cmd_sweep(session);
    else if (command == "emergence") cmd_emergence(session);
    else if (command == "report") cmd_report(session);
    session.write_manifest();
    return kExitOk;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_code_for(e.kind());
  } catch (const fs::filesystem_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitConfig;
  }
}

int run_main(int argc, char** argv) {
  std::vector<std::string> args;
  for (int k = 1; k < argc; ++k) args.emplace_back(argv[k]);
  return run(args);
}

}  // namespace nodelens::cli
