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

#include <cstdlib>
#include <fstream>

#include "cli.hpp"
#include "fixtures.hpp"
#include "nodelens/io.hpp"
#include "nodelens/report.hpp"

using namespace nodelens;
using namespace nodelens::testing;
namespace fs = std::filesystem;

namespace {

std::string tiny_config_text(const fs::path& out) {
  return "d_model=16\nm_ffn=32\nn_layers=2\nn_heads=2\nmax_seq=32\n"
         "corpus=" + source_path("data/corpus.txt") + "\n" +
         "alt_corpus=" + source_path("data/recipes.txt") + "\n" +
         "train_steps=40\ncheckpoint_every=10\nseq_len=32\nbatch_size=2\n"
         "calib_sequences=8\ncalib_length=32\n"
         "block_len=32\neval_tokens=1024\ntrials=2\nhalo_ablation_n=2\n"
         "hit_fractions=0,0.1,0.2,0.3\nsweep_sparsities=0.2,0.5\n"
         "threads=2\nout=" + out.string() + "\n";
}

fs::path write_config(const fs::path& dir, const std::string& text) {
  const fs::path p = dir / "run.cfg";
  std::ofstream(p) << text;
  return p;
}

std::string slurp(const fs::path& p) {
  const auto bytes = read_file_bytes(p);
  return std::string(reinterpret_cast<const char*>(bytes.data()), bytes.size());
}

// Trains and calibrates once; later cases reuse the directory.
const fs::path& trained_run() {
  static const fs::path dir = [] {
    const fs::path d = temp_dir("cli");
    const fs::path cfg = write_config(d, tiny_config_text(d));
    REQUIRE(cli::run({"--config", cfg.string(), "train"}) == cli::kExitOk);
    REQUIRE(cli::run({"--config", cfg.string(), "calibrate"}) == cli::kExitOk);
    return d;
  }();
  return dir;
}

std::string cfg_of(const fs::path& dir) { return (dir / "run.cfg").string(); }

}  // namespace

TEST_SUITE("cli") {
  TEST_CASE("train writes the model, checkpoints and a manifest") {
    const fs::path& d = trained_run();
    CHECK(fs::exists(d / "model.nlck"));
    CHECK(fs::exists(d / "stats.nls"));
    CHECK(fs::exists(d / "stats_alt.nls"));
    CHECK(fs::exists(d / "train_loss.tsv"));
    std::size_t checkpoints = 0;
    for (const auto& e : fs::directory_iterator(d / "checkpoints")) checkpoints += e.is_regular_file();
    CHECK(checkpoints == 5);
    const std::string manifest = slurp(d / "manifest_train.txt");
    CHECK(manifest.find("tool_version=nodelens") != std::string::npos);
    CHECK(manifest.find("seed=0") != std::string::npos);
    CHECK(manifest.find("input=") != std::string::npos);
    CHECK(manifest.find("[config]") != std::string::npos);
  }

  TEST_CASE("calibration is reproducible byte for byte at a fixed worker count") {
    const fs::path& d = trained_run();
    const auto first = read_file_bytes(d / "stats.nls");
    REQUIRE(cli::run({"--config", cfg_of(d), "calibrate"}) == cli::kExitOk);
    CHECK(read_file_bytes(d / "stats.nls") == first);
    const StatsFile f = read_stats(d / "stats.nls");
    CHECK(f.qcross.has_value());
    CHECK(f.wdown_abs.size() == 2);
    CHECK(f.stats.token_count == 8 * 32);
  }

  TEST_CASE("analyze writes concentration and halo tables") {
    const fs::path& d = trained_run();
    REQUIRE(cli::run({"--config", cfg_of(d), "analyze"}) == cli::kExitOk);
    const Table t = parse_tsv(slurp(d / "concentration.tsv"));
    CHECK(t.rows.size() == 2);
    for (const char* name : {"cumulative.tsv", "supernodes.tsv", "factors.tsv", "halo.tsv",
                             "halo_summary.tsv", "mechanism.tsv", "read_dependence.tsv",
                             "domain_jaccard.tsv"}) {
      CHECK_MESSAGE(fs::exists(d / name), name);
    }
  }

  TEST_CASE("LP-only SCAR mask never hits a supernode") {
    const fs::path& d = trained_run();
    REQUIRE(cli::run({"--config", cfg_of(d), "prune", "--variant", "lp", "--sparsity", "0.5"}) ==
            cli::kExitOk);
    const PruneMask mask = read_mask(d / "mask.txt");
    CHECK(mask.hit_rate == 0.0);
    CHECK(mask.total_pruned() == 32);
    CHECK(mask.method == "scar-lp");
    REQUIRE(cli::run({"--config", cfg_of(d), "eval"}) == cli::kExitOk);
    const Table t = parse_tsv(slurp(d / "eval.tsv"));
    REQUIRE(t.rows.size() == 2);
    CHECK(std::get<double>(t.rows[1][4]) == 0.0);
    const double masked = std::get<double>(t.rows[1][5]);
    const double removed = std::get<double>(t.rows[1][6]);
    CHECK(rel_diff(masked, removed) <= 1e-8);
  }

  TEST_CASE("every prune method runs") {
    const fs::path& d = trained_run();
    for (const char* variant : {"prot", "conn"}) {
      CHECK(cli::run({"--config", cfg_of(d), "prune", "--variant", variant, "--mask",
                      (d / (std::string(variant) + ".txt")).string()}) == cli::kExitOk);
      CHECK(read_mask(d / (std::string(variant) + ".txt")).hit_rate == 0.0);
    }
    for (const char* method : {"magnitude", "wanda", "act-l2", "random"}) {
      CHECK(cli::run({"--config", cfg_of(d), "prune", "--method", method, "--mask",
                      (d / (std::string(method) + ".txt")).string()}) == cli::kExitOk);
    }
  }

  TEST_CASE("dose-response sweep has one row per fraction") {
    const fs::path& d = trained_run();
    REQUIRE(cli::run({"--config", cfg_of(d), "sweep", "--method", "random"}) == cli::kExitOk);
    const Table t = parse_tsv(slurp(d / "sweep.tsv"));
    CHECK(t.rows.size() == 4);
    CHECK(fs::exists(d / "sweep.svg"));
  }

  TEST_CASE("ablations, emergence and report") {
    const fs::path& d = trained_run();
    REQUIRE(cli::run({"--config", cfg_of(d), "eval", "--ablations"}) == cli::kExitOk);
    CHECK(parse_tsv(slurp(d / "lp_bins.tsv")).rows.size() == 10);
    CHECK(parse_tsv(slurp(d / "criticality.tsv")).rows.size() == 4);
    CHECK(parse_tsv(slurp(d / "halo_ablation.tsv")).rows.size() == 2);
    REQUIRE(cli::run({"--config", cfg_of(d), "emergence"}) == cli::kExitOk);
    CHECK(parse_tsv(slurp(d / "emergence.tsv")).rows.size() == 5);
    REQUIRE(cli::run({"--config", cfg_of(d), "report"}) == cli::kExitOk);
    for (const char* name : {"cumulative.svg", "lp_bins.svg", "emergence.svg", "train_loss.svg"}) {
      CHECK_MESSAGE(fs::exists(d / name), name);
    }
  }

  TEST_CASE("exit codes") {
    const fs::path& d = trained_run();
    const fs::path scratch = temp_dir("cli_codes");
    CHECK(cli::run({"--config", (scratch / "absent.cfg").string(), "analyze"}) == cli::kExitConfig);
    CHECK(cli::run({"--config", write_config(scratch, "rho=2\n").string(), "analyze"}) ==
          cli::kExitConfig);
    CHECK(cli::run({"--config", write_config(scratch, "no_such_key=1\n").string(), "analyze"}) ==
          cli::kExitConfig);
    CHECK(cli::run({"--config", write_config(scratch, "seq_len=64\n").string(), "analyze"}) ==
          cli::kExitConfig);
    CHECK(cli::run({"--config", cfg_of(d), "analyze", "--bogus"}) == cli::kExitConfig);
    CHECK(cli::run({"--config", cfg_of(d), "prune", "--variant", "nope"}) == cli::kExitConfig);
    CHECK(cli::run({}) == cli::kExitConfig);

    CHECK(cli::run({"--config", cfg_of(d), "prune", "--sparsity", "0.9", "--caps", "0.5",
                    "--mask", (scratch / "m.txt").string()}) == cli::kExitInfeasible);

    auto bytes = read_file_bytes(d / "stats.nls");
    bytes[bytes.size() - 12] ^= std::byte{0x20};
    write_file_atomic(scratch / "bad.nls", bytes);
    CHECK(cli::run({"--config", cfg_of(d), "analyze", "--stats", (scratch / "bad.nls").string()}) ==
          cli::kExitFormat);
    fs::remove_all(scratch);
  }

  TEST_CASE("NODELENS_OUT overrides the output directory") {
    const fs::path& d = trained_run();
    const fs::path other = temp_dir("cli_env");
    fs::copy_file(d / "model.nlck", other / "model.nlck");
    fs::copy_file(d / "stats.nls", other / "stats.nls");
    ::setenv("NODELENS_OUT", other.string().c_str(), 1);
    const int code = cli::run({"--config", cfg_of(d), "prune", "--variant", "lp"});
    ::unsetenv("NODELENS_OUT");
    CHECK(code == cli::kExitOk);
    CHECK(fs::exists(other / "mask.txt"));
    CHECK(fs::exists(other / "manifest_prune.txt"));
    fs::remove_all(other);
  }
}
