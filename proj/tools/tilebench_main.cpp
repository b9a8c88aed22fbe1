// tilebench: robustness benchmarking of tile-embedding models plus the
// statistics and downstream-evaluation toolkit around it.
//
// Subcommands:
//   synth          generate a synthetic staining x scanner cohort
//   run            compute per-pair metrics and aggregates for a cohort
//   report         re-aggregate a persisted pairs.csv
//   stats          paired model comparisons (Wilcoxon + Holm) over a score table
//   downstream     slide-level AUC / CCC protocol on mean-pooled features
//   distill-check  seeded property suite for the distillation losses

#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "tilebench/distill.hpp"
#include "tilebench/downstream.hpp"
#include "tilebench/embedding.hpp"
#include "tilebench/error.hpp"
#include "tilebench/report.hpp"
#include "tilebench/runner.hpp"
#include "tilebench/stats.hpp"
#include "tilebench/synth.hpp"

namespace {

using namespace tilebench;

std::vector<PairMode> parse_modes(const std::string& spec) {
  if (spec == "all")
    return {PairMode::FixedStainingCrossScanner, PairMode::FixedScannerCrossStaining,
            PairMode::CrossStainingCrossScanner};
  std::vector<PairMode> modes;
  std::istringstream in(spec);
  std::string token;
  while (std::getline(in, token, ',')) modes.push_back(pair_mode_from_string(token));
  if (modes.empty()) throw validation_error("no pair modes requested");
  return modes;
}

struct ScoreTable {
  // model -> task -> score
  std::map<std::string, std::map<std::string, double>> scores;
};

ScoreTable load_score_table(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw io_error("cannot open score table: " + path);
  ScoreTable table;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    if (line_no == 1 && line.rfind("model,", 0) == 0) continue;  // header
    std::istringstream row(line);
    std::string model, task, score_s;
    if (!std::getline(row, model, ',') || !std::getline(row, task, ',') ||
        !std::getline(row, score_s, ','))
      throw validation_error("score table line " + std::to_string(line_no) +
                             ": expected model,task,score");
    table.scores[model][task] = std::stod(score_s);
  }
  if (table.scores.empty()) throw validation_error("empty score table: " + path);
  return table;
}

PairedSamples paired_from_table(const ScoreTable& table, const std::string& model_a,
                                const std::string& model_b,
                                const std::vector<std::string>& exclude_tasks) {
  const auto it_a = table.scores.find(model_a);
  const auto it_b = table.scores.find(model_b);
  if (it_a == table.scores.end()) throw validation_error("unknown model: " + model_a);
  if (it_b == table.scores.end()) throw validation_error("unknown model: " + model_b);
  PairedSamples samples;
  for (const auto& [task, score] : it_a->second) {
    const auto hit = it_b->second.find(task);
    if (hit == it_b->second.end()) continue;
    bool skip = false;
    for (const auto& ex : exclude_tasks) skip = skip || ex == task;
    if (skip) continue;
    samples.task_ids.push_back(task);
    samples.scores_a.push_back(score);
    samples.scores_b.push_back(hit->second);
  }
  if (samples.scores_a.empty())
    throw validation_error("models " + model_a + " and " + model_b + " share no tasks");
  return samples;
}

struct LabelRow {
  std::string slide_id;
  std::string group_id;
  double value = 0.0;
};

// labels csv: slide_id,group_id,endpoint,value
std::map<std::string, LabelRow> load_labels(const std::string& path,
                                            const std::string& endpoint) {
  std::ifstream in(path);
  if (!in) throw io_error("cannot open labels file: " + path);
  std::map<std::string, LabelRow> rows;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    if (line_no == 1 && line.rfind("slide_id,", 0) == 0) continue;
    std::istringstream row(line);
    std::string slide, group, ep, value_s;
    if (!std::getline(row, slide, ',') || !std::getline(row, group, ',') ||
        !std::getline(row, ep, ',') || !std::getline(row, value_s, ','))
      throw validation_error("labels line " + std::to_string(line_no) +
                             ": expected slide_id,group_id,endpoint,value");
    if (ep != endpoint) continue;
    rows[slide] = LabelRow{slide, group, std::stod(value_s)};
  }
  return rows;
}

int cmd_synth(const SynthSpec& spec, const std::string& out_dir) {
  const CohortManifest manifest = synth_cohort(spec, out_dir);
  std::printf("wrote %zu slides (%zu stainings x %zu scanners) to %s\n",
              manifest.slides.size(), manifest.stainings.size(), manifest.scanners.size(),
              out_dir.c_str());
  return 0;
}

int cmd_run(const std::string& manifest_path, const std::string& out_dir,
            const RunOptions& options) {
  const CohortManifest manifest = load_manifest(manifest_path);
  const RobustnessReport report = run_benchmark(manifest, manifest_path, options);
  emit_report(report, out_dir);
  std::size_t n_pairs = report.per_pair.size();
  std::printf("computed %zu slide pairs; artifacts in %s\n", n_pairs, out_dir.c_str());
  for (const auto& row : report.aggregates)
    std::printf("  %-30s %-12s median %.4f  iqr %.4f  (n=%zu)\n", to_string(row.mode),
                row.metric.c_str(), row.median, row.iqr, row.n_pairs);
  return 0;
}

int cmd_report(const std::string& pairs_path, const std::string& out_dir) {
  const PersistedPairs pairs = read_pairs_csv(pairs_path);
  RobustnessReport report;
  report.manifest_digest = fnv1a_hex_digest(pairs_path);
  report.ks = pairs.ks;
  report.modes = {PairMode::FixedStainingCrossScanner, PairMode::FixedScannerCrossStaining,
                  PairMode::CrossStainingCrossScanner};
  report.pair_modes = pairs.pair_modes;
  report.per_pair = pairs.per_pair;
  report.aggregates = aggregate_report(report.pair_modes, report.per_pair, report.ks);
  emit_report(report, out_dir);
  std::printf("re-aggregated %zu pairs; artifacts in %s\n", report.per_pair.size(),
              out_dir.c_str());
  return 0;
}

int cmd_stats(const std::string& scores_path, const std::vector<std::string>& comparisons,
              double alpha, const std::vector<std::string>& exclude_tasks) {
  const ScoreTable table = load_score_table(scores_path);
  struct Row {
    std::string label;
    TestResult test;
  };
  std::vector<Row> rows;
  for (const auto& cmp : comparisons) {
    const auto colon = cmp.find(':');
    if (colon == std::string::npos)
      throw validation_error("comparison must look like MODEL_A:MODEL_B, got " + cmp);
    const std::string a = cmp.substr(0, colon), b = cmp.substr(colon + 1);
    const PairedSamples samples = paired_from_table(table, a, b, exclude_tasks);
    rows.push_back({a + " > " + b, wilcoxon_one_sided(samples, Alternative::AGreater)});
  }
  std::vector<double> raw;
  raw.reserve(rows.size());
  for (const auto& r : rows) raw.push_back(r.test.p_value);
  const auto [adjusted, reject] = holm_correction(raw, alpha);

  std::printf("%-28s %6s %14s %10s %10s %7s\n", "comparison", "n_eff", "method", "p",
              "holm_p", "reject");
  for (std::size_t i = 0; i < rows.size(); ++i)
    std::printf("%-28s %6zu %14s %10.4g %10.4g %7s\n", rows[i].label.c_str(),
                rows[i].test.n_effective, rows[i].test.method.c_str(), raw[i], adjusted[i],
                reject[i] ? "yes" : "no");
  return 0;
}

LabeledFeatures pooled_features(const std::vector<const SlideRecord*>& slides,
                                const std::map<std::string, LabelRow>& labels) {
  if (slides.empty()) throw validation_error("no slides to pool");
  LabeledFeatures feats;
  feats.x.resize(static_cast<Eigen::Index>(slides.size()),
                 static_cast<Eigen::Index>(slides.front()->dim));
  feats.y.resize(static_cast<Eigen::Index>(slides.size()), 1);
  for (std::size_t i = 0; i < slides.size(); ++i) {
    const auto label = labels.find(slides[i]->slide_id);
    if (label == labels.end())
      throw validation_error("no label for slide " + slides[i]->slide_id);
    feats.x.row(static_cast<Eigen::Index>(i)) =
        mean_pool_eigen(read_embedding_file(slides[i]->path)).transpose();
    feats.y(static_cast<Eigen::Index>(i), 0) = label->second.value;
    feats.group_ids.push_back(label->second.group_id);
  }
  return feats;
}

int cmd_downstream(const std::string& train_manifest_path, const std::string& train_labels_path,
                   const std::string& eval_manifest_path, const std::string& eval_labels_path,
                   const std::string& endpoint, double l2, bool standardize,
                   const std::string& out_dir) {
  const auto train_list = load_slide_list(train_manifest_path);
  const auto eval_list = load_slide_list(eval_manifest_path);
  const auto train_labels = load_labels(train_labels_path, endpoint);
  const auto eval_labels = load_labels(eval_labels_path, endpoint);

  std::vector<const SlideRecord*> train_slides;
  for (const auto& s : train_list) train_slides.push_back(&s);
  LabeledFeatures train = pooled_features(train_slides, train_labels);
  train.group_ids.clear();  // training rows need no block pairing

  // subcohort = one (staining, scanner) acquisition condition
  std::map<std::string, LabeledFeatures> subcohorts;
  std::map<std::string, std::vector<const SlideRecord*>> by_condition;
  for (const auto& s : eval_list)
    by_condition[s.staining_id + "-" + s.scanner_id].push_back(&s);
  for (const auto& [name, slides] : by_condition)
    subcohorts.emplace(name, pooled_features(slides, eval_labels));

  const BreastBmResult result = run_breastbm_protocol(train, subcohorts, l2, standardize);
  if (!result.converged)
    std::fprintf(stderr, "warning: logistic solver did not reach tolerance\n");

  std::ostringstream aucs, cccs;
  aucs << "subcohort,auc\n";
  std::printf("%-24s %8s\n", "subcohort", "auc");
  for (const auto& [name, value] : result.auc_per_subcohort) {
    std::printf("%-24s %8.4f\n", name.c_str(), value);
    aucs << name << ',' << value << "\n";
  }
  cccs << "subcohort_a,subcohort_b,ccc,shared_blocks\n";
  std::printf("%-24s %8s %14s\n", "subcohort pair", "ccc", "shared_blocks");
  for (const auto& [key, value] : result.ccc_per_pair) {
    const auto bar = key.find('|');
    std::printf("%-24s %8.4f %14zu\n", key.c_str(), value,
                result.shared_blocks_per_pair.at(key));
    cccs << key.substr(0, bar) << ',' << key.substr(bar + 1) << ',' << value << ','
         << result.shared_blocks_per_pair.at(key) << "\n";
  }
  if (!out_dir.empty()) {
    std::filesystem::create_directories(out_dir);
    std::ofstream(out_dir + "/auc.csv") << aucs.str();
    std::ofstream(out_dir + "/ccc.csv") << cccs.str();
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"tile-embedding robustness benchmark"};
  app.require_subcommand(1);

  std::uint64_t seed = 0;
  app.add_option("--seed", seed, "base seed for all randomness")
      ->envname("TILEBENCH_SEED");

  // synth
  auto* synth = app.add_subcommand("synth", "generate a synthetic cohort");
  SynthSpec spec;
  std::string synth_out;
  synth->add_option("--stainings", spec.n_stainings, "number of stainings");
  synth->add_option("--scanners", spec.n_scanners, "number of scanners");
  synth->add_option("--tiles", spec.n_tiles, "tiles per slide");
  synth->add_option("--dim", spec.dim, "embedding dimension");
  synth->add_option("--staining-noise", spec.staining_noise, "staining perturbation scale");
  synth->add_option("--scanner-noise", spec.scanner_noise, "scanner perturbation scale");
  synth->add_option("--out", synth_out, "output directory")->required();

  // run
  auto* run = app.add_subcommand("run", "run the robustness benchmark");
  std::string run_manifest, run_out, run_modes = "all";
  RunOptions run_options;
  std::vector<int> run_ks;
  run->add_option("--manifest", run_manifest, "cohort manifest (jsonl)")->required();
  run->add_option("--out", run_out, "output directory")->required();
  run->add_option("--k", run_ks, "top-k cutoffs (repeatable; default 1 5 10)");
  run->add_option("--modes", run_modes,
                  "comma list of pair families or 'all' (fixed_staining_cross_scanner, "
                  "fixed_scanner_cross_staining, cross_staining_cross_scanner)");
  run->add_option("--threads", run_options.workers, "worker count")
      ->envname("TILEBENCH_THREADS");
  run->add_option("--max-resident-slides", run_options.max_resident_slides,
                  "slide cache capacity")
      ->envname("TILEBENCH_MAX_RESIDENT_SLIDES");

  // report
  auto* report = app.add_subcommand("report", "re-aggregate a persisted pairs.csv");
  std::string report_pairs, report_out;
  report->add_option("--pairs", report_pairs, "pairs.csv from a previous run")->required();
  report->add_option("--out", report_out, "output directory")->required();

  // stats
  auto* stats = app.add_subcommand("stats", "paired model comparison tests");
  std::string stats_scores;
  std::vector<std::string> stats_compare, stats_exclude;
  double stats_alpha = 0.05;
  stats->add_option("--scores", stats_scores, "csv of model,task,score")->required();
  stats->add_option("--compare", stats_compare, "comparison MODEL_A:MODEL_B (repeatable)")
      ->required();
  stats->add_option("--alpha", stats_alpha, "Holm family-wise level");
  stats->add_option("--exclude-task", stats_exclude, "task id to drop (repeatable)");

  // downstream
  auto* down = app.add_subcommand("downstream", "mean-pool + logistic AUC/CCC protocol");
  std::string down_train_manifest, down_train_labels, down_eval_manifest, down_eval_labels;
  std::string down_endpoint, down_out;
  double down_l2 = 1e-2;
  bool down_no_standardize = false;
  down->add_option("--train-manifest", down_train_manifest, "training cohort manifest")
      ->required();
  down->add_option("--train-labels", down_train_labels, "training labels csv")->required();
  down->add_option("--eval-manifest", down_eval_manifest, "evaluation cohort manifest")
      ->required();
  down->add_option("--eval-labels", down_eval_labels, "evaluation labels csv")->required();
  down->add_option("--endpoint", down_endpoint, "endpoint name in the labels files")
      ->required();
  down->add_option("--l2", down_l2, "logistic L2 penalty");
  down->add_flag("--no-standardize", down_no_standardize, "skip feature standardization");
  down->add_option("--out", down_out, "output directory for auc.csv / ccc.csv");

  // distill-check
  auto* distill = app.add_subcommand("distill-check", "distillation loss property suite");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (*synth) {
      spec.seed = seed;
      return cmd_synth(spec, synth_out);
    }
    if (*run) {
      if (!run_ks.empty()) run_options.ks = run_ks;
      run_options.modes = parse_modes(run_modes);
      return cmd_run(run_manifest, run_out, run_options);
    }
    if (*report) return cmd_report(report_pairs, report_out);
    if (*stats) return cmd_stats(stats_scores, stats_compare, stats_alpha, stats_exclude);
    if (*down)
      return cmd_downstream(down_train_manifest, down_train_labels, down_eval_manifest,
                            down_eval_labels, down_endpoint, down_l2, !down_no_standardize,
                            down_out);
    if (*distill) return run_distill_checks(seed, std::cout) ? 0 : 1;
  } catch (const io_error& e) {
    std::fprintf(stderr, "io error: %s\n", e.what());
    return 2;
  } catch (const validation_error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 1;
}
