#include "tilebench/distill.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>

#include "tilebench/error.hpp"
#include "tilebench/rng.hpp"

namespace tilebench {

void DistillConfig::validate() const {
  if (n_prototypes == 0) throw validation_error("config: n_prototypes must be positive");
  if (!(teacher_temperature > 0.0) || !(student_temperature > 0.0))
    throw validation_error("config: temperatures must be strictly positive");
  if (center_momentum < 0.0 || center_momentum > 1.0)
    throw validation_error("config: center_momentum must be in [0,1]");
  if (ema_momentum < 0.0 || ema_momentum > 1.0)
    throw validation_error("config: ema_momentum must be in [0,1]");
  if (loss_weight_dino < 0.0 || loss_weight_ibot < 0.0)
    throw validation_error("config: loss weights must be >= 0");
}

namespace {

void require_finite(const std::vector<double>& v, const char* what) {
  for (const double x : v)
    if (!std::isfinite(x)) throw validation_error(std::string(what) + ": non-finite logit");
}

double max_of(const std::vector<double>& v) {
  return *std::max_element(v.begin(), v.end());
}

}  // namespace

void DistillViewBatch::validate() const {
  if (teacher_class_scores.size() != 2 || student_class_scores.size() != 2)
    throw validation_error("batch: expected class scores for exactly two views");
  const std::size_t k = teacher_class_scores.front().size();
  if (k == 0) throw validation_error("batch: empty prototype dimension");
  for (const auto& v : teacher_class_scores) {
    if (v.size() != k) throw validation_error("batch: inconsistent K across views");
    require_finite(v, "teacher class scores");
  }
  for (const auto& v : student_class_scores) {
    if (v.size() != k) throw validation_error("batch: inconsistent K across views");
    require_finite(v, "student class scores");
  }
  if (!teacher_patch_scores.empty() || !student_patch_scores.empty()) {
    if (teacher_patch_scores.size() != 2 || student_patch_scores.size() != 2)
      throw validation_error("batch: expected patch scores for exactly two views");
    const std::size_t p = teacher_patch_scores.front().size();
    if (p == 0) throw validation_error("batch: patch scores present but P = 0");
    for (const auto* views : {&teacher_patch_scores, &student_patch_scores}) {
      for (const auto& patches : *views) {
        if (patches.size() != p) throw validation_error("batch: inconsistent P across views");
        for (const auto& v : patches) {
          if (v.size() != k) throw validation_error("batch: inconsistent K in patch scores");
          require_finite(v, "patch scores");
        }
      }
    }
  }
  if (!dino_center.empty() && dino_center.size() != k)
    throw validation_error("batch: dino_center length != K");
  if (!ibot_center.empty() && ibot_center.size() != k)
    throw validation_error("batch: ibot_center length != K");
}

std::vector<double> prototype_distribution(const std::vector<double>& logits,
                                           double temperature,
                                           const std::vector<double>* center) {
  if (!(temperature > 0.0))
    throw validation_error("prototype_distribution: temperature must be > 0");
  if (logits.empty()) throw validation_error("prototype_distribution: empty logits");
  require_finite(logits, "prototype_distribution");
  if (center && !center->empty() && center->size() != logits.size())
    throw validation_error("prototype_distribution: center length != K");

  const std::size_t k = logits.size();
  std::vector<double> z(k);
  for (std::size_t i = 0; i < k; ++i) {
    const double c = (center && !center->empty()) ? (*center)[i] : 0.0;
    z[i] = (logits[i] - c) / temperature;
  }
  const double m = max_of(z);
  double sum = 0.0;
  for (std::size_t i = 0; i < k; ++i) {
    z[i] = std::exp(z[i] - m);
    sum += z[i];
  }
  for (std::size_t i = 0; i < k; ++i) {
    z[i] /= sum;
    // extreme gaps underflow exp to 0; keep the support strictly positive
    if (z[i] == 0.0) z[i] = std::numeric_limits<double>::denorm_min();
  }
  return z;
}

double cross_entropy_h(const std::vector<double>& p_teacher,
                       const std::vector<double>& student_logits, double tau_s) {
  if (!(tau_s > 0.0)) throw validation_error("cross_entropy_h: tau_s must be > 0");
  if (p_teacher.size() != student_logits.size())
    throw validation_error("cross_entropy_h: teacher/student length mismatch");
  require_finite(student_logits, "cross_entropy_h");
  const double psum = std::accumulate(p_teacher.begin(), p_teacher.end(), 0.0);
  if (std::fabs(psum - 1.0) > 1e-6)
    throw validation_error("cross_entropy_h: teacher distribution sums to " +
                           std::to_string(psum));

  const std::size_t k = student_logits.size();
  std::vector<double> z(k);
  for (std::size_t i = 0; i < k; ++i) z[i] = student_logits[i] / tau_s;
  const double m = max_of(z);
  double sum_exp = 0.0;
  double dot = 0.0;
  for (std::size_t i = 0; i < k; ++i) {
    sum_exp += std::exp(z[i] - m);
    dot += p_teacher[i] * z[i];
  }
  // H = logsumexp(z) - <p, z>; never exponentiates an unshifted logit.
  return (m + std::log(sum_exp)) - dot;
}

std::vector<double> cross_entropy_h_grad(const std::vector<double>& p_teacher,
                                         const std::vector<double>& student_logits,
                                         double tau_s) {
  const std::vector<double> q = prototype_distribution(student_logits, tau_s);
  if (p_teacher.size() != q.size())
    throw validation_error("cross_entropy_h_grad: length mismatch");
  std::vector<double> g(q.size());
  for (std::size_t i = 0; i < q.size(); ++i) g[i] = (q[i] - p_teacher[i]) / tau_s;
  return g;
}

double dino_loss(const DistillViewBatch& batch, const DistillConfig& cfg) {
  cfg.validate();
  batch.validate();
  const std::vector<double>* center = batch.dino_center.empty() ? nullptr : &batch.dino_center;
  const auto p1 =
      prototype_distribution(batch.teacher_class_scores[0], cfg.teacher_temperature, center);
  const auto p2 =
      prototype_distribution(batch.teacher_class_scores[1], cfg.teacher_temperature, center);
  const double h12 = cross_entropy_h(p1, batch.student_class_scores[1], cfg.student_temperature);
  const double h21 = cross_entropy_h(p2, batch.student_class_scores[0], cfg.student_temperature);
  return (h12 + h21) / 2.0;
}

double ibot_loss(const DistillViewBatch& batch, const DistillConfig& cfg) {
  cfg.validate();
  batch.validate();
  if (batch.teacher_patch_scores.empty())
    throw validation_error("ibot_loss: batch carries no patch scores");
  const std::vector<double>* center = batch.ibot_center.empty() ? nullptr : &batch.ibot_center;
  const std::size_t n_patches = batch.n_patches();
  double sum = 0.0;
  for (std::size_t p = 0; p < n_patches; ++p) {
    for (std::size_t view = 0; view < 2; ++view) {
      const auto t = prototype_distribution(batch.teacher_patch_scores[view][p],
                                            cfg.teacher_temperature, center);
      sum += cross_entropy_h(t, batch.student_patch_scores[view][p], cfg.student_temperature);
    }
  }
  return sum / (2.0 * static_cast<double>(n_patches));
}

double total_loss(const DistillViewBatch& batch, const DistillConfig& cfg) {
  return cfg.loss_weight_dino * dino_loss(batch, cfg) +
         cfg.loss_weight_ibot * ibot_loss(batch, cfg);
}

std::vector<double> ema_update(const std::vector<double>& ema,
                               const std::vector<double>& student, double lambda) {
  if (ema.size() != student.size())
    throw validation_error("ema_update: parameter vectors differ in length");
  if (lambda < 0.0 || lambda > 1.0)
    throw validation_error("ema_update: momentum must be in [0,1]");
  std::vector<double> out(ema.size());
  for (std::size_t i = 0; i < ema.size(); ++i)
    out[i] = lambda * ema[i] + (1.0 - lambda) * student[i];
  return out;
}

std::vector<double> update_center(const std::vector<double>& center,
                                  const std::vector<std::vector<double>>& teacher_batch_logits,
                                  double center_momentum) {
  if (teacher_batch_logits.empty()) throw validation_error("update_center: empty batch");
  if (center_momentum < 0.0 || center_momentum > 1.0)
    throw validation_error("update_center: momentum must be in [0,1]");
  const std::size_t k = center.size();
  for (const auto& row : teacher_batch_logits)
    if (row.size() != k) throw validation_error("update_center: logit row length != K");
  std::vector<double> out(k);
  const double b = static_cast<double>(teacher_batch_logits.size());
  for (std::size_t i = 0; i < k; ++i) {
    double col = 0.0;
    for (const auto& row : teacher_batch_logits) col += row[i];
    out[i] = center_momentum * center[i] + (1.0 - center_momentum) * (col / b);
  }
  return out;
}

namespace {

std::vector<double> random_logits(SplitMix64& rng, std::size_t k, double scale) {
  std::vector<double> v(k);
  for (auto& x : v) x = scale * rng.next_gaussian();
  return v;
}

DistillViewBatch random_batch(SplitMix64& rng, std::size_t k, std::size_t n_patches,
                              double scale) {
  DistillViewBatch b;
  b.teacher_class_scores = {random_logits(rng, k, scale), random_logits(rng, k, scale)};
  b.student_class_scores = {random_logits(rng, k, scale), random_logits(rng, k, scale)};
  b.teacher_patch_scores.resize(2);
  b.student_patch_scores.resize(2);
  for (std::size_t v = 0; v < 2; ++v) {
    for (std::size_t p = 0; p < n_patches; ++p) {
      b.teacher_patch_scores[v].push_back(random_logits(rng, k, scale));
      b.student_patch_scores[v].push_back(random_logits(rng, k, scale));
    }
  }
  b.dino_center = random_logits(rng, k, 0.5);
  b.ibot_center = random_logits(rng, k, 0.5);
  return b;
}

double entropy_of(const std::vector<double>& p) {
  double h = 0.0;
  for (const double x : p)
    if (x > 0.0) h -= x * std::log(x);
  return h;
}

}  // namespace

bool run_distill_checks(std::uint64_t seed, std::ostream& out) {
  bool all_ok = true;
  const auto report = [&](const char* name, bool ok) {
    out << (ok ? "[PASS] " : "[FAIL] ") << name << "\n";
    all_ok = all_ok && ok;
  };
  DistillConfig cfg;

  {  // logit-shift invariance of distributions and losses
    SplitMix64 rng(substream_seed(seed, 1));
    bool ok = true;
    for (int rep = 0; rep < 40 && ok; ++rep) {
      auto batch = random_batch(rng, 8 + rep % 9, 3, 4.0);
      const double base_dino = dino_loss(batch, cfg);
      const double base_ibot = ibot_loss(batch, cfg);
      const double shift = 10.0 * rng.next_gaussian();
      for (auto& x : batch.teacher_class_scores[0]) x += shift;
      for (auto& x : batch.student_class_scores[1]) x += shift;
      for (auto& x : batch.teacher_patch_scores[1][0]) x += shift;
      ok = std::fabs(dino_loss(batch, cfg) - base_dino) <= 1e-6 &&
           std::fabs(ibot_loss(batch, cfg) - base_ibot) <= 1e-6;
    }
    report("shift invariance (1e-6)", ok);
  }

  {  // view-swap symmetry of the class-score loss: exact
    SplitMix64 rng(substream_seed(seed, 2));
    bool ok = true;
    for (int rep = 0; rep < 40 && ok; ++rep) {
      auto batch = random_batch(rng, 16, 2, 3.0);
      const double a = dino_loss(batch, cfg);
      std::swap(batch.teacher_class_scores[0], batch.teacher_class_scores[1]);
      std::swap(batch.student_class_scores[0], batch.student_class_scores[1]);
      ok = dino_loss(batch, cfg) == a;
    }
    report("view-swap symmetry (exact)", ok);
  }

  {  // matched one-hot teacher/student => loss ~ 0
    std::vector<double> p = {1.0, 0.0, 0.0};
    std::vector<double> s = {40.0, -40.0, -40.0};
    const bool ok = cross_entropy_h(p, s, 1.0) < 1e-10;
    report("matched one-hot (<1e-10)", ok);
  }

  {  // closed forms: H([1,0],[0,0]) = ln 2, uniform student over K=2
    const double ln2 = std::log(2.0);
    const double a = cross_entropy_h({1.0, 0.0}, {0.0, 0.0}, 1.0);
    const double b = cross_entropy_h({0.5, 0.5}, {0.0, 0.0}, 1.0);
    const bool ok = std::fabs(a - ln2) <= 1e-9 && std::fabs(b - ln2) <= 1e-9;
    report("ln2 closed forms (1e-9)", ok);
  }

  {  // non-negativity
    SplitMix64 rng(substream_seed(seed, 3));
    bool ok = true;
    for (int rep = 0; rep < 60 && ok; ++rep) {
      auto batch = random_batch(rng, 4 + rep % 13, 2, 5.0);
      ok = dino_loss(batch, cfg) >= -1e-9 && ibot_loss(batch, cfg) >= -1e-9;
    }
    report("non-negativity", ok);
  }

  {  // H lower bound: minimum over student logits is entropy(p), at s = log p
    SplitMix64 rng(substream_seed(seed, 4));
    bool ok = true;
    for (int rep = 0; rep < 10 && ok; ++rep) {
      auto p = prototype_distribution(random_logits(rng, 3, 2.0), 1.0);
      const double h_p = entropy_of(p);
      std::vector<double> opt(3);
      for (std::size_t i = 0; i < 3; ++i) opt[i] = std::log(p[i]);
      ok = std::fabs(cross_entropy_h(p, opt, 1.0) - h_p) <= 1e-9;
      // coarse grid over the two free coordinates (shift-invariant in the third)
      double grid_min = 1e300;
      for (double x = -6.0; x <= 6.0 && ok; x += 0.25)
        for (double y = -6.0; y <= 6.0; y += 0.25)
          grid_min = std::min(grid_min, cross_entropy_h(p, {x, y, 0.0}, 1.0));
      ok = ok && grid_min >= h_p - 1e-9;
    }
    report("H lower bound = entropy(p)", ok);
  }

  {  // patch-permutation invariance of the patch loss
    SplitMix64 rng(substream_seed(seed, 5));
    bool ok = true;
    for (int rep = 0; rep < 20 && ok; ++rep) {
      auto batch = random_batch(rng, 8, 5, 3.0);
      const double base = ibot_loss(batch, cfg);
      std::vector<std::size_t> perm(5);
      for (std::size_t i = 0; i < 5; ++i) perm[i] = i;
      for (std::size_t i = 4; i > 0; --i)
        std::swap(perm[i], perm[rng.next_below(i + 1)]);
      DistillViewBatch shuffled = batch;
      for (std::size_t v = 0; v < 2; ++v)
        for (std::size_t i = 0; i < 5; ++i) {
          shuffled.teacher_patch_scores[v][i] = batch.teacher_patch_scores[v][perm[i]];
          shuffled.student_patch_scores[v][i] = batch.student_patch_scores[v][perm[i]];
        }
      ok = std::fabs(ibot_loss(shuffled, cfg) - base) <= 1e-9;
    }
    report("patch-permutation invariance (1e-9)", ok);
  }

  {  // analytic gradient of H vs central finite differences
    SplitMix64 rng(substream_seed(seed, 6));
    bool ok = true;
    for (int rep = 0; rep < 30 && ok; ++rep) {
      const std::size_t k = 2 + rng.next_below(15);
      auto p = prototype_distribution(random_logits(rng, k, 2.0), 1.0);
      auto s = random_logits(rng, k, 3.0);
      const double tau = 0.5 + rng.next_double();
      const auto g = cross_entropy_h_grad(p, s, tau);
      double g_scale = 1e-8;
      for (const double x : g) g_scale = std::max(g_scale, std::fabs(x));
      const double h = 1e-5;
      for (std::size_t i = 0; i < k && ok; ++i) {
        auto hi = s, lo = s;
        hi[i] += h;
        lo[i] -= h;
        const double fd = (cross_entropy_h(p, hi, tau) - cross_entropy_h(p, lo, tau)) / (2 * h);
        // error relative to the gradient magnitude; near-zero components are
        // pure cancellation noise under any per-component scaling
        ok = std::fabs(fd - g[i]) / g_scale <= 1e-5;
      }
    }
    report("analytic H-gradient vs finite differences (1e-5 rel)", ok);
  }

  {  // full prototype width: K = 131072 with large logits must stay finite
    SplitMix64 rng(substream_seed(seed, 7));
    std::vector<double> logits(cfg.n_prototypes);
    for (auto& x : logits) x = 500.0 * rng.next_gaussian();
    const auto p = prototype_distribution(logits, cfg.teacher_temperature);
    double sum = 0.0;
    bool finite = true;
    for (const double x : p) {
      finite = finite && std::isfinite(x) && x > 0.0;
      sum += x;
    }
    const double h = cross_entropy_h(p, logits, cfg.student_temperature);
    report("K=131072 stability", finite && std::fabs(sum - 1.0) <= 1e-9 && std::isfinite(h));
  }

  {  // EMA and center update identities
    const std::vector<double> ema{1.0, 2.0}, stu{3.0, 6.0};
    const bool ok_ema = ema_update(ema, stu, 1.0) == ema && ema_update(ema, stu, 0.0) == stu;
    const std::vector<std::vector<double>> batch{{0.0, 2.0}, {2.0, 0.0}};
    const auto c0 = update_center({9.0, 9.0}, batch, 0.0);
    const auto c1 = update_center({9.0, 9.0}, batch, 1.0);
    const bool ok_center = c0 == std::vector<double>{1.0, 1.0} &&
                           c1 == std::vector<double>{9.0, 9.0};
    report("EMA/center momentum endpoints", ok_ema && ok_center);
  }

  return all_ok;
}

}  // namespace tilebench
