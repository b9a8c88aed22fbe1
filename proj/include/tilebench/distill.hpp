#pragma once

#include <cstddef>
#include <optional>
#include <ostream>
#include <vector>

namespace tilebench {

// Distillation hyperparameters. The projection-head / optimizer constants
// mirror the published training recipe; temperatures, centering momentum and
// loss weights are configuration with DINO-family defaults.
struct DistillConfig {
  std::size_t n_prototypes = 131072;
  double teacher_temperature = 0.07;
  double student_temperature = 0.1;
  double center_momentum = 0.9;
  double ema_momentum = 0.994;
  double loss_weight_dino = 1.0;
  double loss_weight_ibot = 1.0;

  // Training-recipe constants, stored for reporting/configuration only.
  int warmup_epochs = 16;
  int teacher_temp_warmup_epochs = 30;
  double weight_decay_end = 0.4;
  int batch_size = 2048;
  int iterations = 105000;
  int patch_size = 14;
  int register_tokens = 4;
  int embed_dim = 768;
  int layers = 12;
  int heads = 12;
  int mlp_ratio = 4;
  int dino_bottleneck = 384;
  int ibot_bottleneck = 256;

  void validate() const;
};

// Prototype scores for the two augmented views of one image: class scores
// for the DINO objective, per-patch scores for the iBOT objective. Teacher
// centers ride along as optional state (empty = no centering).
struct DistillViewBatch {
  // [view][k], view in {0, 1}
  std::vector<std::vector<double>> teacher_class_scores;
  std::vector<std::vector<double>> student_class_scores;
  // [view][patch][k]
  std::vector<std::vector<std::vector<double>>> teacher_patch_scores;
  std::vector<std::vector<std::vector<double>>> student_patch_scores;
  std::vector<double> dino_center;  // K or empty
  std::vector<double> ibot_center;  // K or empty

  std::size_t n_prototypes() const {
    return teacher_class_scores.empty() ? 0 : teacher_class_scores.front().size();
  }
  std::size_t n_patches() const {
    return teacher_patch_scores.empty() ? 0 : teacher_patch_scores.front().size();
  }
  void validate() const;
};

// softmax((logits - center) / temperature) with max-subtraction. The result
// sums to 1 within 1e-9 and every entry is strictly positive.
std::vector<double> prototype_distribution(const std::vector<double>& logits,
                                           double temperature,
                                           const std::vector<double>* center = nullptr);

// -sum_k p[k] * log softmax(student/tau_s)[k], evaluated via log-sum-exp.
double cross_entropy_h(const std::vector<double>& p_teacher,
                       const std::vector<double>& student_logits, double tau_s);

// d/d(student_logits) of cross_entropy_h: (softmax(s/tau_s) - p) / tau_s.
std::vector<double> cross_entropy_h_grad(const std::vector<double>& p_teacher,
                                         const std::vector<double>& student_logits,
                                         double tau_s);

// (H(t1, s2) + H(t2, s1)) / 2 over class scores.
double dino_loss(const DistillViewBatch& batch, const DistillConfig& cfg);

// (1/2P) sum over both views and all P patches of H(t, s); no patch masking.
double ibot_loss(const DistillViewBatch& batch, const DistillConfig& cfg);

double total_loss(const DistillViewBatch& batch, const DistillConfig& cfg);

// lambda * ema + (1 - lambda) * student, elementwise.
std::vector<double> ema_update(const std::vector<double>& ema,
                               const std::vector<double>& student, double lambda);

// m_c * center + (1 - m_c) * column-mean(teacher_batch_logits).
std::vector<double> update_center(const std::vector<double>& center,
                                  const std::vector<std::vector<double>>& teacher_batch_logits,
                                  double center_momentum);

// Seeded property suite behind the `distill-check` CLI subcommand. Prints
// one pass/fail line per property to `out`; returns true when all pass.
bool run_distill_checks(std::uint64_t seed, std::ostream& out);

}  // namespace tilebench
