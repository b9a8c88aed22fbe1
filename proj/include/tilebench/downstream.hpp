#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "tilebench/embedding.hpp"

namespace tilebench {

// Slide-level design matrix plus endpoint(s). For classification y holds one
// binary column; for regression Y may be multi-target. group_ids (tumor
// block / spot) pair rows across subcohorts when present.
struct LabeledFeatures {
  Eigen::MatrixXd x;               // n x d
  Eigen::MatrixXd y;               // n x 1 (classification) or n x G (regression)
  std::vector<std::string> group_ids;  // empty or size n

  std::size_t n() const { return static_cast<std::size_t>(x.rows()); }
  void validate(bool classification) const;
};

struct LinearModel {
  enum class Kind { Logistic, Ridge };
  Kind kind = Kind::Logistic;
  Eigen::MatrixXd weights;  // d x G (G = 1 for logistic)
  Eigen::VectorXd bias;     // G
  double regularization = 0.0;
  bool converged = true;
  int iterations = 0;
};

struct PcaProjection {
  Eigen::VectorXd mean;        // d
  Eigen::MatrixXd components;  // q x d, orthonormal rows, variance-ordered
  Eigen::VectorXd explained_variance;  // q, sample (n-1) convention
  bool clamped = false;        // q was reduced (rank or n-1 limit)

  Eigen::MatrixXd transform(const Eigen::MatrixXd& x) const;
};

// Column-wise mean of a tile-embedding matrix: the slide-level feature.
std::vector<float> mean_pool(const EmbeddingMatrix& tiles);
Eigen::VectorXd mean_pool_eigen(const EmbeddingMatrix& tiles);

// L2-regularized logistic regression, minimizing
//   (1/n) sum log(1 + exp(-y~ (x.w + b))) + (l2/2) ||w||^2
// (bias unpenalized) by full-batch gradient descent with backtracking line
// search from zero init. Deterministic; flags non-convergence but still
// returns the model.
LinearModel fit_logistic(const LabeledFeatures& data, double l2, int max_iter = 10000,
                         double tol = 1e-8);

double logistic_objective(const LabeledFeatures& data, double l2, const Eigen::VectorXd& w,
                          double b);

// Logistic kind: sigmoid(Xw + b); ridge kind: XW + b (first target column).
Eigen::VectorXd predict_scores(const LinearModel& model, const Eigen::MatrixXd& x);
Eigen::MatrixXd predict_matrix(const LinearModel& model, const Eigen::MatrixXd& x);

// Mann-Whitney AUC: P(score+ > score-) + 0.5 P(tie) over all
// positive-negative pairs, computed with midranks.
double auc(const std::vector<double>& scores, const std::vector<int>& labels);

// PCA with mean centering. q is clamped to min(q, d, n-1, positive-variance
// rank); sign convention: each component's largest-magnitude entry is
// positive.
PcaProjection pca_fit(const Eigen::MatrixXd& x, std::size_t q);

// Closed-form ridge on centered features and targets:
//   W = (Zc' Zc + alpha I)^-1 Zc' Yc,  bias = y_mean - z_mean' W.
LinearModel ridge_fit(const Eigen::MatrixXd& z, const Eigen::MatrixXd& y, double alpha);

double pearson(const std::vector<double>& x, const std::vector<double>& y);

// Lin's concordance correlation with population (1/n) moments:
//   2 s_xy / (s_x^2 + s_y^2 + (mean_x - mean_y)^2).
double ccc(const std::vector<double>& x, const std::vector<double>& y);

struct HestResult {
  std::vector<std::optional<double>> per_target;  // nullopt: constant test target
  double mean_pearson = 0.0;
  std::size_t n_excluded = 0;
  std::size_t q_used = 0;
  std::vector<std::string> warnings;
};

// PCA (train only) -> standardized projection -> ridge -> per-target Pearson
// on the test split; targets with constant test values are excluded from the
// mean with a warning.
HestResult run_hest_protocol(const LabeledFeatures& train, const LabeledFeatures& test,
                             std::size_t q = 256, double alpha = 1.0);

struct BreastBmResult {
  std::map<std::string, double> auc_per_subcohort;
  // key: "name1|name2" with name1 < name2
  std::map<std::string, double> ccc_per_pair;
  std::map<std::string, std::size_t> shared_blocks_per_pair;
  bool converged = true;
};

// One logistic model on the training slides; AUC per subcohort; CCC between
// the prediction vectors of every subcohort pair restricted to shared
// group_ids. Features are standardized with train statistics by default.
BreastBmResult run_breastbm_protocol(const LabeledFeatures& train,
                                     const std::map<std::string, LabeledFeatures>& subcohorts,
                                     double l2, bool standardize = true);

}  // namespace tilebench
