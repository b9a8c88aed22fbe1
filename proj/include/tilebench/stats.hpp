#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace tilebench {

// Per-task scores of two systems under comparison, paired by task.
struct PairedSamples {
  std::vector<std::string> task_ids;
  std::vector<double> scores_a;
  std::vector<double> scores_b;

  void validate() const;
};

enum class Alternative { AGreater, ALess };

struct TestResult {
  double statistic = 0.0;   // signed-rank sum W+ (Wilcoxon) or observed delta
  double p_value = 1.0;
  std::size_t n_effective = 0;
  std::string method;       // "exact", "normal-approx", "degenerate", "bootstrap"
  std::size_t redraws = 0;  // bootstrap only: resamples rejected and redrawn
};

// One-sided Wilcoxon signed-rank test on paired scores. Zero differences are
// dropped; |differences| are midranked. The exact null distribution is used
// when n_effective <= 25 and no rank ties occur, otherwise the normal
// approximation with tie and continuity corrections.
TestResult wilcoxon_one_sided(const PairedSamples& samples,
                              Alternative alternative = Alternative::AGreater);

// Step-down Holm adjustment. Returns adjusted p-values in input order plus
// reject flags at level alpha.
std::pair<std::vector<double>, std::vector<bool>> holm_correction(
    const std::vector<double>& p_values, double alpha);

// Paired bootstrap test of AUC_A > AUC_B: resample rows with replacement,
// p = (1 + #{delta_b <= 0}) / (n_boot + 1). Resamples on which AUC is
// undefined (single class) are redrawn and counted.
TestResult paired_bootstrap_p(const std::vector<double>& scores_a,
                              const std::vector<double>& scores_b,
                              const std::vector<int>& labels, std::size_t n_boot,
                              std::uint64_t seed);

// Unweighted harmonic mean of p-values: L / sum(1/p_i).
double harmonic_mean_p(const std::vector<double>& p_values);

}  // namespace tilebench
