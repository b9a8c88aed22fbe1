#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "tilebench/embedding.hpp"
#include "tilebench/metrics.hpp"

namespace tilebench {

// The three slide-pair families. On a complete staining x scanner grid they
// partition the set of all unordered slide pairs.
enum class PairMode {
  FixedStainingCrossScanner,
  FixedScannerCrossStaining,
  CrossStainingCrossScanner,
};

const char* to_string(PairMode mode);
PairMode pair_mode_from_string(const std::string& name);

struct AggregateRow {
  PairMode mode;
  std::string metric;  // "mean_cosine" or "top_k@<k>"
  double median = 0.0;
  double iqr = 0.0;
  std::size_t n_pairs = 0;
};

struct RobustnessReport {
  std::string manifest_digest;  // FNV-1a 64 over the manifest bytes, hex
  std::vector<int> ks;
  std::vector<PairMode> modes;
  int workers = 1;
  std::int64_t timestamp_unix = 0;  // informational; never emitted to artifacts
  // Parallel arrays: pair_modes[i] is the family of per_pair[i]. Sorted by
  // (mode, slide_a, slide_b).
  std::vector<PairMode> pair_modes;
  std::vector<SlidePairMetrics> per_pair;
  std::vector<AggregateRow> aggregates;
};

// Unordered pairs of one family, each emitted with slide_a < slide_b and the
// list itself sorted lexicographically.
std::vector<std::pair<std::string, std::string>> enumerate_pairs(const CohortManifest& manifest,
                                                                 PairMode mode);

// Median and Q75-Q25 with quartiles linearly interpolated between closest
// order statistics at positions p*(n-1) (the common "type 7" convention).
std::pair<double, double> aggregate_median_iqr(const std::vector<double>& values);

struct RunOptions {
  std::vector<int> ks{1, 5, 10};
  std::vector<PairMode> modes{PairMode::FixedStainingCrossScanner,
                              PairMode::FixedScannerCrossStaining,
                              PairMode::CrossStainingCrossScanner};
  int workers = 1;
  std::size_t max_resident_slides = 16;  // LRU cache capacity, in slides
};

// Computes SlidePairMetrics for every pair of every requested mode and the
// median/IQR aggregates per (mode, metric). Output is independent of worker
// count and scheduling. Fails fast on an unreadable slide.
RobustnessReport run_benchmark(const CohortManifest& manifest,
                               const std::filesystem::path& manifest_path,
                               const RunOptions& options);

// Recomputes aggregate rows from per-pair metrics (used both by
// run_benchmark and when re-aggregating a persisted per-pair file).
std::vector<AggregateRow> aggregate_report(const std::vector<PairMode>& pair_modes,
                                           const std::vector<SlidePairMetrics>& per_pair,
                                           const std::vector<int>& ks);

std::string fnv1a_hex_digest(const std::filesystem::path& file);

}  // namespace tilebench
