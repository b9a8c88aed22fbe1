#include <doctest.h>

#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>

#include "tilebench/error.hpp"
#include "tilebench/rng.hpp"
#include "tilebench/stats.hpp"
#include "oracles.hpp"

using namespace tilebench;

namespace {

PairedSamples make_samples(const std::vector<double>& a, const std::vector<double>& b) {
  PairedSamples s;
  s.scores_a = a;
  s.scores_b = b;
  for (std::size_t i = 0; i < a.size(); ++i) s.task_ids.push_back("t" + std::to_string(i));
  return s;
}

// model -> task -> score, from the shipped fixture
std::map<std::string, std::map<std::string, double>> load_fixture() {
  std::ifstream in(std::string(TILEBENCH_DATA_DIR) + "/model_scores.csv");
  REQUIRE(in.good());
  std::map<std::string, std::map<std::string, double>> table;
  std::string line;
  std::getline(in, line);  // header
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream row(line);
    std::string model, task, score;
    std::getline(row, model, ',');
    std::getline(row, task, ',');
    std::getline(row, score, ',');
    table[model][task] = std::stod(score);
  }
  return table;
}

PairedSamples fixture_pair(const std::string& a, const std::string& b, bool include_bach) {
  const auto table = load_fixture();
  PairedSamples s;
  for (const auto& [task, score] : table.at(a)) {
    if (!include_bach && task == "eva_bach") continue;
    s.task_ids.push_back(task);
    s.scores_a.push_back(score);
    s.scores_b.push_back(table.at(b).at(task));
  }
  return s;
}

}  // namespace

TEST_CASE("wilcoxon: all-positive n=5 exact p") {
  const auto s = make_samples({1.1, 2.2, 3.3, 4.4, 5.5}, {1, 2, 3, 4, 5});
  const auto r = wilcoxon_one_sided(s);
  CHECK(r.method == "exact");
  CHECK(r.n_effective == 5);
  CHECK(r.p_value == 0.03125);  // 1 / 2^5 exactly
}

TEST_CASE("wilcoxon: degenerate equal samples") {
  const auto s = make_samples({1, 2, 3}, {1, 2, 3});
  const auto r = wilcoxon_one_sided(s);
  CHECK(r.p_value == 1.0);
  CHECK(r.n_effective == 0);
  CHECK(r.method == "degenerate");
}

TEST_CASE("wilcoxon: zeros dropped, exact matches full enumeration") {
  SplitMix64 rng(5150);
  for (int rep = 0; rep < 40; ++rep) {
    const std::size_t n = 3 + rng.next_below(9);
    std::vector<double> a(n), b(n);
    for (std::size_t i = 0; i < n; ++i) {
      b[i] = rng.next_gaussian();
      a[i] = b[i] + rng.next_gaussian();
    }
    a[0] = b[0];  // force one dropped difference
    const auto r = wilcoxon_one_sided(make_samples(a, b));
    if (r.method != "exact") continue;  // accidental |d| ties fall back

    // reconstruct integer ranks for the oracle
    std::vector<double> diffs;
    for (std::size_t i = 0; i < n; ++i)
      if (a[i] != b[i]) diffs.push_back(a[i] - b[i]);
    std::vector<std::size_t> idx(diffs.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::sort(idx.begin(), idx.end(), [&](std::size_t p, std::size_t q) {
      return std::fabs(diffs[p]) < std::fabs(diffs[q]);
    });
    std::vector<double> signed_ranks(diffs.size());
    for (std::size_t pos = 0; pos < idx.size(); ++pos)
      signed_ranks[idx[pos]] = static_cast<double>(pos + 1);
    std::vector<double> ranks;
    double w_obs = 0.0;
    for (std::size_t i = 0; i < diffs.size(); ++i) {
      ranks.push_back(signed_ranks[i]);
      if (diffs[i] > 0) w_obs += signed_ranks[i];
    }
    CHECK(r.p_value == doctest::Approx(oracle::enumerated_wilcoxon_p(ranks, w_obs))
                           .epsilon(1e-12));
    CHECK(r.n_effective == diffs.size());
  }
}

TEST_CASE("wilcoxon: one-sided tails are complementary under the exact null") {
  const auto s = make_samples({1.7, 1.7, 3.95, 0.6, 3.0, 2.45, 0.25},
                              {1.0, 2.0, 3.5, 1.5, 1.0, 3.0, 0.125});
  const auto greater = wilcoxon_one_sided(s, Alternative::AGreater);
  const auto less = wilcoxon_one_sided(s, Alternative::ALess);
  REQUIRE(greater.method == "exact");
  // P(W >= w) + P(W <= w) - P(W = w) = 1, so the excess over 1 is the null
  // point mass at the observed statistic: a value in (0, 1).
  const double atom = greater.p_value + less.p_value - 1.0;
  CHECK(atom > 0.0);
  CHECK(atom < 1.0);
  const std::size_t n = greater.n_effective;
  CHECK(greater.statistic <= static_cast<double>(n * (n + 1)) / 2.0);
}

TEST_CASE("wilcoxon: permuting task order leaves p unchanged") {
  SplitMix64 rng(31);
  std::vector<double> a(12), b(12);
  for (std::size_t i = 0; i < 12; ++i) {
    a[i] = rng.next_gaussian();
    b[i] = rng.next_gaussian();
  }
  const auto base = wilcoxon_one_sided(make_samples(a, b));
  std::vector<std::size_t> perm(12);
  std::iota(perm.begin(), perm.end(), 0);
  for (std::size_t i = 11; i > 0; --i) std::swap(perm[i], perm[rng.next_below(i + 1)]);
  std::vector<double> pa(12), pb(12);
  for (std::size_t i = 0; i < 12; ++i) {
    pa[i] = a[perm[i]];
    pb[i] = b[perm[i]];
  }
  const auto permuted = wilcoxon_one_sided(make_samples(pa, pb));
  CHECK(permuted.p_value == base.p_value);
  CHECK(permuted.statistic == base.statistic);
}

TEST_CASE("wilcoxon on the published score fixture reproduces the reported pattern") {
  struct Expectation {
    const char* a;
    const char* b;
    double lo;
    double hi;
  };
  // H0 > H0-mini in [0.02, 0.06]; H0-mini > UNI in [0.02, 0.07];
  // H0-mini > Phikon below 1e-3; Virchow2 > H0-mini not significant.
  for (const bool include_bach : {true, false}) {
    const auto p_h0 =
        wilcoxon_one_sided(fixture_pair("H0", "H0-mini", include_bach)).p_value;
    const auto p_uni =
        wilcoxon_one_sided(fixture_pair("H0-mini", "UNI", include_bach)).p_value;
    const auto p_phikon =
        wilcoxon_one_sided(fixture_pair("H0-mini", "Phikon", include_bach)).p_value;
    const auto p_virchow =
        wilcoxon_one_sided(fixture_pair("Virchow2", "H0-mini", include_bach)).p_value;
    INFO("include_bach=", include_bach, " p_h0=", p_h0, " p_uni=", p_uni,
         " p_phikon=", p_phikon, " p_virchow=", p_virchow);
    if (include_bach) {  // the 17-task variant is the primary reproduction
      CHECK(p_h0 >= 0.02);
      CHECK(p_h0 <= 0.06);
      CHECK(p_uni >= 0.02);
      CHECK(p_uni <= 0.07);
      CHECK(p_phikon < 1e-3);
      CHECK(p_virchow > 0.05);
    }
    const auto r = wilcoxon_one_sided(fixture_pair("UNI2-h", "H0-mini", include_bach));
    CHECK(r.p_value < 1e-4);
  }
}

TEST_CASE("wilcoxon: p decreases as the statistic grows, both methods") {
  // exact path: same n, increasingly positive differences
  double prev = 1.1;
  for (int positives = 1; positives <= 6; ++positives) {
    std::vector<double> a(6), b(6, 0.0);
    for (int i = 0; i < 6; ++i) a[i] = (i < positives ? 1.0 : -1.0) * (i + 1);
    const auto r = wilcoxon_one_sided(make_samples(a, b));
    REQUIRE(r.method == "exact");
    CHECK(r.p_value < prev);
    prev = r.p_value;
  }
  // normal-approximation path (n = 30)
  prev = 1.1;
  for (int positives = 5; positives <= 30; positives += 5) {
    std::vector<double> a(30), b(30, 0.0);
    for (int i = 0; i < 30; ++i) a[i] = (i < positives ? 1.0 : -1.0) * (i + 1);
    const auto r = wilcoxon_one_sided(make_samples(a, b));
    REQUIRE(r.method == "normal-approx");
    CHECK(r.p_value < prev);
    prev = r.p_value;
  }
}

TEST_CASE("holm_correction") {
  {
    const auto [adjusted, reject] = holm_correction({0.01, 0.04, 0.03}, 0.05);
    CHECK(adjusted[0] == doctest::Approx(0.03));
    CHECK(adjusted[1] == doctest::Approx(0.06));
    CHECK(adjusted[2] == doctest::Approx(0.06));
    CHECK(reject == std::vector<bool>{true, false, false});
  }
  {
    const auto [adjusted, reject] = holm_correction({0.04}, 0.05);
    CHECK(adjusted[0] == 0.04);
    CHECK(reject[0]);
  }
  {
    const auto [adjusted, reject] = holm_correction({1.0, 1.0, 1.0}, 0.05);
    CHECK(reject == std::vector<bool>{false, false, false});
  }
  {  // adjusted values are monotone in the sorted order and >= raw
    SplitMix64 rng(8);
    std::vector<double> ps(9);
    for (auto& p : ps) p = std::max(1e-9, rng.next_double());
    const auto [adjusted, reject] = holm_correction(ps, 0.05);
    for (std::size_t i = 0; i < ps.size(); ++i) CHECK(adjusted[i] >= ps[i]);
    std::vector<std::size_t> idx(ps.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::sort(idx.begin(), idx.end(),
              [&](std::size_t a, std::size_t b) { return ps[a] < ps[b]; });
    for (std::size_t i = 1; i < idx.size(); ++i)
      CHECK(adjusted[idx[i]] >= adjusted[idx[i - 1]]);
  }
  CHECK_THROWS_AS(holm_correction({0.0}, 0.05), validation_error);
}

TEST_CASE("paired_bootstrap_p") {
  {  // equal scores: every delta is zero
    std::vector<double> s{0.9, 0.8, 0.4, 0.3, 0.7, 0.2};
    std::vector<int> y{1, 1, 0, 0, 1, 0};
    const auto r = paired_bootstrap_p(s, s, y, 200, 7);
    CHECK(r.p_value == 1.0);
  }
  {  // A perfectly separates, B anti-separates: p attains the lower bound
    const std::size_t n = 60;
    std::vector<double> a(n), b(n);
    std::vector<int> y(n);
    for (std::size_t i = 0; i < n; ++i) {
      y[i] = i < n / 2 ? 1 : 0;
      a[i] = y[i] == 1 ? 1.0 : 0.0;
      b[i] = y[i] == 1 ? 0.0 : 1.0;
    }
    const auto r = paired_bootstrap_p(a, b, y, 500, 11);
    CHECK(r.p_value == doctest::Approx(1.0 / 501.0));
  }
  {  // determinism given the seed
    SplitMix64 rng(3);
    std::vector<double> a(30), b(30);
    std::vector<int> y(30);
    for (std::size_t i = 0; i < 30; ++i) {
      y[i] = i % 2 == 0 ? 1 : 0;
      a[i] = y[i] + 0.8 * rng.next_gaussian();
      b[i] = y[i] + 1.2 * rng.next_gaussian();
    }
    const auto r1 = paired_bootstrap_p(a, b, y, 300, 12345);
    const auto r2 = paired_bootstrap_p(a, b, y, 300, 12345);
    CHECK(r1.p_value == r2.p_value);
    CHECK(r1.redraws == r2.redraws);
    CHECK(r1.p_value >= 1.0 / 301.0);
    CHECK(r1.p_value <= 1.0);
  }
  CHECK_THROWS_AS(paired_bootstrap_p({1.0, 0.0}, {0.0, 1.0}, {1, 0}, 50, 1),
                  validation_error);  // n_boot too small
}

TEST_CASE("harmonic_mean_p") {
  CHECK(harmonic_mean_p({0.05}) == 0.05);
  CHECK(harmonic_mean_p({0.1, 0.1}) == doctest::Approx(0.1));
  CHECK(harmonic_mean_p({0.01, 1.0}) == doctest::Approx(2.0 / 101.0).epsilon(1e-12));
  CHECK_THROWS_AS(harmonic_mean_p({}), validation_error);
  CHECK_THROWS_AS(harmonic_mean_p({0.5, 0.0}), validation_error);

  SplitMix64 rng(77);
  for (int rep = 0; rep < 30; ++rep) {
    std::vector<double> ps(1 + rng.next_below(8));
    double lo = 1.0, hi = 0.0;
    for (auto& p : ps) {
      p = std::max(1e-9, rng.next_double());
      lo = std::min(lo, p);
      hi = std::max(hi, p);
    }
    const double h = harmonic_mean_p(ps);
    CHECK(h >= lo - 1e-15);
    CHECK(h <= hi + 1e-15);
  }
}
