#pragma once

#include <filesystem>
#include <vector>

#include "tilebench/runner.hpp"

namespace tilebench {

// Emits the three run artifacts into out_dir:
//   pairs.csv     - one row per slide pair (full-precision values)
//   aggregate.csv - one row per (mode, metric): median, IQR, n_pairs
//   report.txt    - human-readable table, cells "median (IQR)" to 2 decimals
// Output is byte-deterministic for a given report content; volatile run
// details (timestamp, worker count) are deliberately not written.
void emit_report(const RobustnessReport& report, const std::filesystem::path& out_dir);

struct PersistedPairs {
  std::vector<int> ks;
  std::vector<PairMode> pair_modes;
  std::vector<SlidePairMetrics> per_pair;
};

// Reads back a pairs.csv so aggregation can be redone without recomputation.
PersistedPairs read_pairs_csv(const std::filesystem::path& path);

}  // namespace tilebench
