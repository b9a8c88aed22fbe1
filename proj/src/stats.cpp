#include "tilebench/stats.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <set>

#include "tilebench/error.hpp"
#include "tilebench/downstream.hpp"
#include "tilebench/rng.hpp"

namespace tilebench {

void PairedSamples::validate() const {
  if (scores_a.size() != scores_b.size())
    throw validation_error("paired samples: unequal score vectors");
  if (scores_a.empty()) throw validation_error("paired samples: empty");
  if (!task_ids.empty()) {
    if (task_ids.size() != scores_a.size())
      throw validation_error("paired samples: task_ids length mismatch");
    std::set<std::string> uniq(task_ids.begin(), task_ids.end());
    if (uniq.size() != task_ids.size())
      throw validation_error("paired samples: duplicate task_ids");
  }
}

namespace {

double normal_sf(double z) { return 0.5 * std::erfc(z / std::sqrt(2.0)); }

// P(W >= w) under the exact signed-rank null with integer ranks 1..n:
// subset-sum counting over all 2^n sign assignments.
double exact_upper_tail(std::size_t n, double w_threshold) {
  const std::size_t max_sum = n * (n + 1) / 2;
  std::vector<double> ways(max_sum + 1, 0.0);  // counts fit a double exactly for n <= 25
  ways[0] = 1.0;
  for (std::size_t r = 1; r <= n; ++r)
    for (std::size_t s = max_sum; s + 1 >= r + 1; --s) ways[s] += ways[s - r];
  double count = 0.0;
  for (std::size_t s = 0; s <= max_sum; ++s)
    if (static_cast<double>(s) >= w_threshold) count += ways[s];
  return count / std::ldexp(1.0, static_cast<int>(n));
}

}  // namespace

TestResult wilcoxon_one_sided(const PairedSamples& samples, Alternative alternative) {
  samples.validate();

  std::vector<double> diffs;
  for (std::size_t i = 0; i < samples.scores_a.size(); ++i) {
    const double d = samples.scores_a[i] - samples.scores_b[i];
    if (!std::isfinite(d)) throw validation_error("wilcoxon: non-finite difference");
    if (d != 0.0) diffs.push_back(d);
  }

  TestResult res;
  res.n_effective = diffs.size();
  if (diffs.empty()) {
    res.p_value = 1.0;
    res.method = "degenerate";
    return res;
  }

  const std::size_t n = diffs.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return std::fabs(diffs[a]) < std::fabs(diffs[b]);
  });

  // Midranks of |d|; track tie groups for the variance correction.
  std::vector<double> rank(n, 0.0);
  bool has_ties = false;
  double tie_term = 0.0;  // sum of t^3 - t over tie groups
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j + 1 < n && std::fabs(diffs[order[j + 1]]) == std::fabs(diffs[order[i]])) ++j;
    const double midrank = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t t = i; t <= j; ++t) rank[order[t]] = midrank;
    const double t_count = static_cast<double>(j - i + 1);
    if (j > i) {
      has_ties = true;
      tie_term += t_count * t_count * t_count - t_count;
    }
    i = j + 1;
  }

  double w_plus = 0.0;
  for (std::size_t q = 0; q < n; ++q)
    if (diffs[q] > 0.0) w_plus += rank[q];
  res.statistic = w_plus;

  // For "A less", large W- is evidence; mirror the statistic.
  const double total = static_cast<double>(n) * static_cast<double>(n + 1) / 2.0;
  const double w_evidence = alternative == Alternative::AGreater ? w_plus : total - w_plus;

  if (n <= 25 && !has_ties) {
    res.method = "exact";
    res.p_value = exact_upper_tail(n, w_evidence);
  } else {
    res.method = "normal-approx";
    const double nn = static_cast<double>(n);
    const double mean = nn * (nn + 1.0) / 4.0;
    const double var = nn * (nn + 1.0) * (2.0 * nn + 1.0) / 24.0 - tie_term / 48.0;
    if (var <= 0.0) {  // every |d| tied into one group of zeros cannot happen; guard anyway
      res.p_value = 1.0;
      return res;
    }
    const double z = (w_evidence - mean - 0.5) / std::sqrt(var);
    res.p_value = normal_sf(z);
  }
  if (res.p_value > 1.0) res.p_value = 1.0;
  if (res.p_value <= 0.0) res.p_value = std::numeric_limits<double>::min();
  return res;
}

std::pair<std::vector<double>, std::vector<bool>> holm_correction(
    const std::vector<double>& p_values, double alpha) {
  const std::size_t m = p_values.size();
  for (const double p : p_values)
    if (!(p > 0.0) || p > 1.0)
      throw validation_error("holm: p-values must lie in (0, 1]");

  std::vector<std::size_t> order(m);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return p_values[a] < p_values[b]; });

  std::vector<double> adjusted(m, 0.0);
  double running = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    const double scaled = static_cast<double>(m - i) * p_values[order[i]];
    running = std::max(running, scaled);
    adjusted[order[i]] = std::min(running, 1.0);
  }

  std::vector<bool> reject(m, false);
  for (std::size_t i = 0; i < m; ++i) {
    if (adjusted[order[i]] <= alpha) reject[order[i]] = true;
    else break;  // step-down: stop at the first failure
  }
  return {adjusted, reject};
}

TestResult paired_bootstrap_p(const std::vector<double>& scores_a,
                              const std::vector<double>& scores_b,
                              const std::vector<int>& labels, std::size_t n_boot,
                              std::uint64_t seed) {
  if (scores_a.size() != scores_b.size() || scores_a.size() != labels.size())
    throw validation_error("bootstrap: input length mismatch");
  if (n_boot < 100) throw validation_error("bootstrap: n_boot must be >= 100");
  const std::size_t n = labels.size();
  if (n < 2) throw validation_error("bootstrap: need at least two samples");

  TestResult res;
  res.method = "bootstrap";
  std::size_t non_positive = 0;
  std::vector<double> ra(n), rb(n);
  std::vector<int> rl(n);
  for (std::size_t b = 0; b < n_boot; ++b) {
    SplitMix64 rng(substream_seed(seed, b));
    for (std::size_t attempt = 0;; ++attempt) {
      if (attempt > 1000)
        throw validation_error("bootstrap: could not draw a two-class resample");
      bool pos = false, neg = false;
      for (std::size_t i = 0; i < n; ++i) {
        const std::size_t idx = static_cast<std::size_t>(rng.next_below(n));
        ra[i] = scores_a[idx];
        rb[i] = scores_b[idx];
        rl[i] = labels[idx];
        (rl[i] == 1 ? pos : neg) = true;
      }
      if (pos && neg) break;
      ++res.redraws;
    }
    const double delta = auc(ra, rl) - auc(rb, rl);
    if (delta <= 0.0) ++non_positive;
  }
  res.n_effective = n;
  res.statistic = auc(scores_a, labels) - auc(scores_b, labels);
  res.p_value = static_cast<double>(1 + non_positive) / static_cast<double>(n_boot + 1);
  return res;
}

double harmonic_mean_p(const std::vector<double>& p_values) {
  if (p_values.empty()) throw validation_error("harmonic_mean_p: empty list");
  double denom = 0.0;
  for (const double p : p_values) {
    if (!(p > 0.0) || p > 1.0)
      throw validation_error("harmonic_mean_p: p-values must lie in (0, 1]");
    denom += 1.0 / p;
  }
  return static_cast<double>(p_values.size()) / denom;
}

}  // namespace tilebench
