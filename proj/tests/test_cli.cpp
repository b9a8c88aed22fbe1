#include <doctest.h>

#include <array>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>

#include "tilebench/embedding.hpp"
#include "tilebench/rng.hpp"
#include "tilebench/runner.hpp"
#include "tilebench/synth.hpp"

using namespace tilebench;
namespace fs = std::filesystem;

namespace {

struct CliResult {
  int exit_code = -1;
  std::string output;  // stdout + stderr
};

CliResult run_cli(const std::string& args) {
  const std::string cmd = std::string(TILEBENCH_CLI_PATH) + " " + args + " 2>&1";
  std::array<char, 512> buf{};
  CliResult result;
  FILE* pipe = popen(cmd.c_str(), "r");
  REQUIRE(pipe != nullptr);
  while (fgets(buf.data(), buf.size(), pipe)) result.output += buf.data();
  const int status = pclose(pipe);
  result.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return result;
}

fs::path temp_dir(const char* name) {
  const fs::path dir = fs::temp_directory_path() / "tilebench_tests" / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return std::string((std::istreambuf_iterator<char>(in)), {});
}

}  // namespace

TEST_CASE("cli: synth then run, happy path") {
  const auto dir = temp_dir("cli_happy");
  auto synth = run_cli("--seed 3 synth --stainings 2 --scanners 2 --tiles 12 --dim 4 "
                       "--staining-noise 0.1 --scanner-noise 0.1 --out " +
                       (dir / "cohort").string());
  CHECK(synth.exit_code == 0);

  auto run = run_cli("run --manifest " + (dir / "cohort" / "manifest.jsonl").string() +
                     " --k 10 --out " + (dir / "results").string());
  CHECK(run.exit_code == 0);
  CHECK(fs::exists(dir / "results" / "pairs.csv"));
  CHECK(fs::exists(dir / "results" / "aggregate.csv"));
  CHECK(fs::exists(dir / "results" / "report.txt"));
}

TEST_CASE("cli: missing manifest exits 2 and names the path") {
  const auto missing = (temp_dir("cli_missing") / "nope.jsonl").string();
  const auto r = run_cli("run --manifest " + missing + " --out /tmp/unused_out");
  CHECK(r.exit_code == 2);
  CHECK(r.output.find(missing) != std::string::npos);
}

TEST_CASE("cli: unknown flag exits 1 with usage") {
  const auto r = run_cli("run --definitely-not-a-flag");
  CHECK(r.exit_code == 1);
}

TEST_CASE("cli: no subcommand exits 1") {
  CHECK(run_cli("").exit_code == 1);
}

TEST_CASE("cli: stats on the shipped fixture prints the expected p") {
  const auto r = run_cli(std::string("stats --scores ") + TILEBENCH_DATA_DIR +
                         "/model_scores.csv --compare H0:H0-mini");
  CHECK(r.exit_code == 0);
  // one comparison line with p in the reproduction band around 0.039
  const auto pos = r.output.find("H0 > H0-mini");
  REQUIRE(pos != std::string::npos);
  double n_eff = 0, p = 0, holm_p = 0;
  char method[32] = {0};
  REQUIRE(std::sscanf(r.output.c_str() + pos, "H0 > H0-mini %lf %31s %lf %lf", &n_eff,
                      method, &p, &holm_p) == 4);
  CHECK(n_eff == 16);  // one zero difference dropped
  CHECK(p >= 0.02);
  CHECK(p <= 0.06);
}

TEST_CASE("cli: distill-check passes") {
  const auto r = run_cli("--seed 11 distill-check");
  CHECK(r.exit_code == 0);
  CHECK(r.output.find("[FAIL]") == std::string::npos);
  CHECK(r.output.find("[PASS]") != std::string::npos);
}

TEST_CASE("cli: end-to-end determinism across thread counts") {
  const auto dir = temp_dir("cli_determinism");
  for (const char* threads : {"1", "7"}) {
    const std::string sub = (dir / threads).string();
    auto synth = run_cli("--seed 42 synth --stainings 2 --scanners 3 --tiles 16 --dim 5 "
                         "--staining-noise 0.2 --scanner-noise 0.1 --out " + sub);
    REQUIRE(synth.exit_code == 0);
    auto run = run_cli("run --manifest " + sub + "/manifest.jsonl --threads " +
                       std::string(threads) + " --out " + sub + "/results");
    REQUIRE(run.exit_code == 0);
  }
  for (const char* name : {"manifest.jsonl"})
    CHECK(read_file(dir / "1" / name) == read_file(dir / "7" / name));
  for (const char* name : {"pairs.csv", "aggregate.csv", "report.txt"})
    CHECK(read_file(dir / "1" / "results" / name) ==
          read_file(dir / "7" / "results" / name));
}

TEST_CASE("cli: report subcommand reproduces the aggregate file") {
  const auto dir = temp_dir("cli_report");
  REQUIRE(run_cli("--seed 2 synth --stainings 2 --scanners 2 --tiles 10 --dim 4 "
                  "--scanner-noise 0.3 --out " + (dir / "c").string()).exit_code == 0);
  REQUIRE(run_cli("run --manifest " + (dir / "c" / "manifest.jsonl").string() + " --out " +
                  (dir / "r1").string()).exit_code == 0);
  REQUIRE(run_cli("report --pairs " + (dir / "r1" / "pairs.csv").string() + " --out " +
                  (dir / "r2").string()).exit_code == 0);
  CHECK(read_file(dir / "r1" / "aggregate.csv") == read_file(dir / "r2" / "aggregate.csv"));
}

TEST_CASE("cli: downstream AUC/CCC tables on a synthetic cohort") {
  const auto dir = temp_dir("cli_downstream");
  // Hand-built cohorts: tumor blocks with a linear signal, each block
  // acquired under two conditions (same staining, two scanners).
  SplitMix64 rng(6060);
  const std::size_t d = 6, tiles = 5, blocks = 24, train_n = 60;
  std::vector<double> w(d);
  for (auto& v : w) v = rng.next_gaussian();

  const auto make_slide = [&](const fs::path& path, double shift,
                              std::vector<double>& pooled_out) {
    EmbeddingMatrix m(tiles, d);
    pooled_out.assign(d, 0.0);
    for (std::size_t t = 0; t < tiles; ++t)
      for (std::size_t j = 0; j < d; ++j) {
        const double v = rng.next_gaussian() + shift;
        m.row(t)[j] = static_cast<float>(v);
        pooled_out[j] += v / tiles;
      }
    write_embedding_file(m, path);
  };

  fs::create_directories(dir / "train");
  fs::create_directories(dir / "eval");
  std::ofstream train_manifest(dir / "train" / "manifest.jsonl");
  std::ofstream train_labels(dir / "train_labels.csv");
  train_labels << "slide_id,group_id,endpoint,value\n";
  for (std::size_t i = 0; i < train_n; ++i) {
    const std::string id = "tr" + std::to_string(i);
    std::vector<double> pooled;
    make_slide(dir / "train" / (id + ".peb"), (i % 2) ? 0.6 : -0.6, pooled);
    double score = 0.0;
    for (std::size_t j = 0; j < d; ++j) score += pooled[j];
    train_manifest << "{\"slide_id\":\"" << id << "\",\"staining\":\"hes\","
                   << "\"scanner\":\"s0\",\"path\":\"" << id << ".peb\",\"n_tiles\":"
                   << tiles << ",\"dim\":" << d << "}\n";
    train_labels << id << ",-,ER," << (score > 0 ? 1 : 0) << "\n";
  }

  std::ofstream eval_manifest(dir / "eval" / "manifest.jsonl");
  std::ofstream eval_labels(dir / "eval_labels.csv");
  eval_labels << "slide_id,group_id,endpoint,value\n";
  for (std::size_t b = 0; b < blocks; ++b) {
    for (const char* scanner : {"sA", "sB"}) {
      const std::string id = "ev" + std::to_string(b) + scanner;
      std::vector<double> pooled;
      make_slide(dir / "eval" / (id + ".peb"), (b % 2) ? 0.6 : -0.6, pooled);
      eval_manifest << "{\"slide_id\":\"" << id << "\",\"staining\":\"hes\","
                    << "\"scanner\":\"" << scanner << "\",\"path\":\"" << id
                    << ".peb\",\"n_tiles\":" << tiles << ",\"dim\":" << d << "}\n";
      eval_labels << id << ",block" << b << ",ER," << (b % 2) << "\n";
    }
  }
  train_manifest.close();
  train_labels.close();
  eval_manifest.close();
  eval_labels.close();

  auto r = run_cli("downstream --train-manifest " + (dir / "train" / "manifest.jsonl").string() +
                   " --train-labels " + (dir / "train_labels.csv").string() +
                   " --eval-manifest " + (dir / "eval" / "manifest.jsonl").string() +
                   " --eval-labels " + (dir / "eval_labels.csv").string() +
                   " --endpoint ER --l2 0.1 --out " + (dir / "tables").string());
  INFO(r.output);
  CHECK(r.exit_code == 0);
  CHECK(r.output.find("hes-sA") != std::string::npos);
  CHECK(r.output.find("hes-sA|hes-sB") != std::string::npos);
  CHECK(fs::exists(dir / "tables" / "auc.csv"));
  CHECK(fs::exists(dir / "tables" / "ccc.csv"));
  // same condition twice, same blocks: predictions agree strongly
  const std::string ccc_csv = read_file(dir / "tables" / "ccc.csv");
  CHECK(ccc_csv.find("hes-sA,hes-sB,") != std::string::npos);
}

TEST_CASE("monotone robustness: scanner noise cannot raise the cross-scanner median") {
  const auto dir = temp_dir("monotone");
  double prev_top = 1.0 + 1e-9, prev_cos = 1.0 + 1e-9;
  int level = 0;
  for (const double sigma : {0.0, 0.1, 0.2, 0.4, 0.8}) {
    SynthSpec spec;
    spec.n_stainings = 3;
    spec.n_scanners = 4;
    spec.n_tiles = 48;
    spec.dim = 12;
    spec.staining_noise = 0.1;
    spec.scanner_noise = sigma;
    spec.seed = 20240601;  // common random numbers across levels
    const auto manifest = synth_cohort(spec, dir / std::to_string(level++));
    RunOptions options;
    options.workers = 2;
    options.modes = {PairMode::FixedStainingCrossScanner};
    const auto report =
        run_benchmark(manifest, dir / std::to_string(level - 1) / "manifest.jsonl", options);
    double top10 = -1.0, cosine = -1.0;
    for (const auto& row : report.aggregates) {
      if (row.metric == "top_k@10") top10 = row.median;
      if (row.metric == "mean_cosine") cosine = row.median;
    }
    CHECK(top10 <= prev_top);
    CHECK(cosine <= prev_cos);
    prev_top = top10;
    prev_cos = cosine;
  }
}
