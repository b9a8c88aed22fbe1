#include "tilebench/downstream.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "tilebench/error.hpp"

namespace tilebench {

namespace {

double softplus(double u) {
  // log(1 + e^u) without overflow
  if (u > 30.0) return u;
  if (u < -30.0) return std::exp(u);
  return std::log1p(std::exp(u));
}

double sigmoid(double m) {
  if (m >= 0.0) return 1.0 / (1.0 + std::exp(-m));
  const double e = std::exp(m);
  return e / (1.0 + e);
}

}  // namespace

void LabeledFeatures::validate(bool classification) const {
  if (x.rows() < 2) throw validation_error("need at least two samples");
  if (y.rows() != x.rows()) throw validation_error("feature/target row mismatch");
  if (!x.allFinite() || !y.allFinite())
    throw validation_error("non-finite entries in features or targets");
  if (!group_ids.empty() && group_ids.size() != n())
    throw validation_error("group_ids length does not match sample count");
  if (classification) {
    if (y.cols() != 1) throw validation_error("classification expects one label column");
    bool has0 = false, has1 = false;
    for (Eigen::Index i = 0; i < y.rows(); ++i) {
      if (y(i, 0) == 0.0) has0 = true;
      else if (y(i, 0) == 1.0) has1 = true;
      else throw validation_error("labels must be 0 or 1");
    }
    if (!has0 || !has1) throw validation_error("both classes must be present");
  }
}

std::vector<float> mean_pool(const EmbeddingMatrix& tiles) {
  if (tiles.n_tiles == 0) throw validation_error("mean_pool: empty tile matrix");
  std::vector<float> out(tiles.dim);
  for (std::size_t j = 0; j < tiles.dim; ++j) {
    double s = 0.0;
    for (std::size_t i = 0; i < tiles.n_tiles; ++i)
      s += static_cast<double>(tiles.row(i)[j]);
    out[j] = static_cast<float>(s / static_cast<double>(tiles.n_tiles));
  }
  return out;
}

Eigen::VectorXd mean_pool_eigen(const EmbeddingMatrix& tiles) {
  const auto pooled = mean_pool(tiles);
  Eigen::VectorXd v(static_cast<Eigen::Index>(pooled.size()));
  for (std::size_t j = 0; j < pooled.size(); ++j)
    v(static_cast<Eigen::Index>(j)) = static_cast<double>(pooled[j]);
  return v;
}

double logistic_objective(const LabeledFeatures& data, double l2, const Eigen::VectorXd& w,
                          double b) {
  const Eigen::Index n = data.x.rows();
  const Eigen::VectorXd margins = data.x * w + Eigen::VectorXd::Constant(n, b);
  double loss = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const double ysign = data.y(i, 0) > 0.5 ? 1.0 : -1.0;
    loss += softplus(-ysign * margins(i));
  }
  return loss / static_cast<double>(n) + 0.5 * l2 * w.squaredNorm();
}

LinearModel fit_logistic(const LabeledFeatures& data, double l2, int max_iter, double tol) {
  data.validate(true);
  if (!(l2 > 0.0)) throw validation_error("fit_logistic: l2 must be > 0");

  const Eigen::Index n = data.x.rows(), d = data.x.cols();
  Eigen::VectorXd w = Eigen::VectorXd::Zero(d);
  double b = 0.0;
  double f = logistic_objective(data, l2, w, b);
  double step = 1.0;
  bool converged = false;
  int iter = 0;

  for (; iter < max_iter; ++iter) {
    const Eigen::VectorXd margins = data.x * w + Eigen::VectorXd::Constant(n, b);
    Eigen::VectorXd residual(n);
    for (Eigen::Index i = 0; i < n; ++i) residual(i) = sigmoid(margins(i)) - data.y(i, 0);
    const Eigen::VectorXd gw = data.x.transpose() * residual / static_cast<double>(n) + l2 * w;
    const double gb = residual.sum() / static_cast<double>(n);
    const double gnorm2 = gw.squaredNorm() + gb * gb;
    if (std::sqrt(gnorm2) <= tol) {
      converged = true;
      break;
    }
    // Armijo backtracking; the objective is convex, so this always finds a
    // decreasing step unless we are at float resolution.
    double trial_f = 0.0;
    for (;;) {
      const Eigen::VectorXd w_new = w - step * gw;
      const double b_new = b - step * gb;
      trial_f = logistic_objective(data, l2, w_new, b_new);
      if (trial_f <= f - 1e-4 * step * gnorm2) {
        w = w_new;
        b = b_new;
        break;
      }
      step *= 0.5;
      if (step < 1e-18) break;
    }
    if (step < 1e-18) break;  // stuck at float resolution
    f = trial_f;
    step = std::min(step * 2.0, 1e6);
  }

  LinearModel model;
  model.kind = LinearModel::Kind::Logistic;
  model.weights = w;
  model.bias = Eigen::VectorXd::Constant(1, b);
  model.regularization = l2;
  model.converged = converged;
  model.iterations = iter;
  return model;
}

Eigen::MatrixXd predict_matrix(const LinearModel& model, const Eigen::MatrixXd& x) {
  if (x.cols() != model.weights.rows())
    throw validation_error("predict: feature dim " + std::to_string(x.cols()) +
                           " != model dim " + std::to_string(model.weights.rows()));
  Eigen::MatrixXd scores = x * model.weights;
  scores.rowwise() += model.bias.transpose();
  if (model.kind == LinearModel::Kind::Logistic)
    for (Eigen::Index i = 0; i < scores.rows(); ++i)
      for (Eigen::Index j = 0; j < scores.cols(); ++j) scores(i, j) = sigmoid(scores(i, j));
  return scores;
}

Eigen::VectorXd predict_scores(const LinearModel& model, const Eigen::MatrixXd& x) {
  return predict_matrix(model, x).col(0);
}

double auc(const std::vector<double>& scores, const std::vector<int>& labels) {
  if (scores.size() != labels.size()) throw validation_error("auc: score/label length mismatch");
  const std::size_t n = scores.size();
  std::size_t n_pos = 0;
  for (const int l : labels) {
    if (l != 0 && l != 1) throw validation_error("auc: labels must be 0 or 1");
    n_pos += static_cast<std::size_t>(l);
  }
  const std::size_t n_neg = n - n_pos;
  if (n_pos == 0 || n_neg == 0)
    throw validation_error("auc undefined: only one class present");

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

  // Midranks over tied scores; rank sum of positives gives the U statistic.
  double rank_sum_pos = 0.0;
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j + 1 < n && scores[order[j + 1]] == scores[order[i]]) ++j;
    const double midrank = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t t = i; t <= j; ++t)
      if (labels[order[t]] == 1) rank_sum_pos += midrank;
    i = j + 1;
  }
  const double u = rank_sum_pos - 0.5 * static_cast<double>(n_pos) *
                                      static_cast<double>(n_pos + 1);
  return u / (static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

Eigen::MatrixXd PcaProjection::transform(const Eigen::MatrixXd& x) const {
  if (x.cols() != mean.size())
    throw validation_error("pca transform: dimension mismatch");
  return (x.rowwise() - mean.transpose()) * components.transpose();
}

PcaProjection pca_fit(const Eigen::MatrixXd& x, std::size_t q) {
  if (x.rows() < 2) throw validation_error("pca_fit: need at least two samples");
  if (q == 0) throw validation_error("pca_fit: q must be positive");
  const Eigen::Index n = x.rows(), d = x.cols();

  PcaProjection p;
  p.mean = x.colwise().mean();
  const Eigen::MatrixXd centered = x.rowwise() - p.mean.transpose();

  Eigen::BDCSVD<Eigen::MatrixXd> svd(centered, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const Eigen::VectorXd& sv = svd.singularValues();
  if (sv.size() == 0 || sv(0) <= 0.0)
    throw validation_error("pca_fit: zero-variance input");
  const double rank_tol =
      sv(0) * static_cast<double>(std::max(n, d)) * std::numeric_limits<double>::epsilon();
  std::size_t rank = 0;
  for (Eigen::Index i = 0; i < sv.size(); ++i)
    if (sv(i) > rank_tol) ++rank;

  const std::size_t q_eff = std::min({q, static_cast<std::size_t>(d),
                                      static_cast<std::size_t>(n - 1), rank});
  p.clamped = q_eff < q;
  p.components = svd.matrixV().leftCols(static_cast<Eigen::Index>(q_eff)).transpose();
  p.explained_variance.resize(static_cast<Eigen::Index>(q_eff));
  for (std::size_t i = 0; i < q_eff; ++i) {
    const double s = sv(static_cast<Eigen::Index>(i));
    p.explained_variance(static_cast<Eigen::Index>(i)) = s * s / static_cast<double>(n - 1);
  }

  // Deterministic sign: the largest-magnitude entry of each component is
  // positive (first occurrence wins on magnitude ties).
  for (Eigen::Index i = 0; i < p.components.rows(); ++i) {
    Eigen::Index arg = 0;
    double best = -1.0;
    for (Eigen::Index j = 0; j < p.components.cols(); ++j) {
      const double mag = std::fabs(p.components(i, j));
      if (mag > best) {
        best = mag;
        arg = j;
      }
    }
    if (p.components(i, arg) < 0.0) p.components.row(i) = -p.components.row(i);
  }
  return p;
}

LinearModel ridge_fit(const Eigen::MatrixXd& z, const Eigen::MatrixXd& y, double alpha) {
  if (z.rows() != y.rows()) throw validation_error("ridge_fit: row count mismatch");
  if (z.rows() < 1) throw validation_error("ridge_fit: empty input");
  if (alpha < 0.0) throw validation_error("ridge_fit: alpha must be >= 0");

  const Eigen::RowVectorXd z_mean = z.colwise().mean();
  const Eigen::RowVectorXd y_mean = y.colwise().mean();
  const Eigen::MatrixXd zc = z.rowwise() - z_mean;
  const Eigen::MatrixXd yc = y.rowwise() - y_mean;

  Eigen::MatrixXd gram = zc.transpose() * zc;
  gram.diagonal().array() += alpha;

  LinearModel model;
  model.kind = LinearModel::Kind::Ridge;
  model.regularization = alpha;
  if (alpha == 0.0) {
    Eigen::FullPivLU<Eigen::MatrixXd> lu(gram);
    if (!lu.isInvertible())
      throw validation_error("ridge_fit: singular system at alpha = 0");
    model.weights = lu.solve(zc.transpose() * yc);
  } else {
    model.weights = gram.ldlt().solve(zc.transpose() * yc);
  }
  model.bias = (y_mean - z_mean * model.weights).transpose();
  return model;
}

double pearson(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size()) throw validation_error("pearson: length mismatch");
  const std::size_t n = x.size();
  if (n < 2) throw validation_error("pearson: need n >= 2");
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(n);
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / static_cast<double>(n);
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double dx = x[i] - mx, dy = y[i] - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  if (sxx == 0.0 || syy == 0.0)
    throw validation_error("pearson undefined for a constant vector");
  double r = sxy / std::sqrt(sxx * syy);
  if (r > 1.0) r = 1.0;
  if (r < -1.0) r = -1.0;
  return r;
}

double ccc(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size()) throw validation_error("ccc: length mismatch");
  const std::size_t n = x.size();
  if (n < 2) throw validation_error("ccc: need n >= 2");
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(n);
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / static_cast<double>(n);
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double dx = x[i] - mx, dy = y[i] - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  sxy /= static_cast<double>(n);
  sxx /= static_cast<double>(n);
  syy /= static_cast<double>(n);
  const double denom = sxx + syy + (mx - my) * (mx - my);
  if (denom == 0.0)
    throw validation_error("ccc undefined: both vectors constant with equal means");
  return 2.0 * sxy / denom;
}

HestResult run_hest_protocol(const LabeledFeatures& train, const LabeledFeatures& test,
                             std::size_t q, double alpha) {
  train.validate(false);
  test.validate(false);
  if (train.x.cols() != test.x.cols())
    throw validation_error("hest: train/test feature dims differ");
  if (train.y.cols() != test.y.cols())
    throw validation_error("hest: train/test target counts differ");

  HestResult result;
  const PcaProjection pca = pca_fit(train.x, q);
  result.q_used = static_cast<std::size_t>(pca.components.rows());
  if (pca.clamped)
    result.warnings.push_back("pca components clamped to " + std::to_string(result.q_used));

  Eigen::MatrixXd z_train = pca.transform(train.x);
  Eigen::MatrixXd z_test = pca.transform(test.x);

  // Standardize projections with train statistics so that alpha acts on a
  // common scale.
  const Eigen::RowVectorXd mu = z_train.colwise().mean();
  Eigen::RowVectorXd sd(z_train.cols());
  for (Eigen::Index j = 0; j < z_train.cols(); ++j) {
    const double var = (z_train.col(j).array() - mu(j)).square().sum() /
                       static_cast<double>(z_train.rows() - 1);
    sd(j) = var > 0.0 ? std::sqrt(var) : 1.0;
  }
  z_train = (z_train.rowwise() - mu).array().rowwise() / sd.array();
  z_test = (z_test.rowwise() - mu).array().rowwise() / sd.array();

  const LinearModel model = ridge_fit(z_train, train.y, alpha);
  const Eigen::MatrixXd preds = predict_matrix(model, z_test);

  double sum = 0.0;
  std::size_t counted = 0;
  for (Eigen::Index g = 0; g < test.y.cols(); ++g) {
    std::vector<double> yhat(static_cast<std::size_t>(preds.rows()));
    std::vector<double> ytrue(static_cast<std::size_t>(preds.rows()));
    for (Eigen::Index i = 0; i < preds.rows(); ++i) {
      yhat[static_cast<std::size_t>(i)] = preds(i, g);
      ytrue[static_cast<std::size_t>(i)] = test.y(i, g);
    }
    try {
      const double r = pearson(yhat, ytrue);
      result.per_target.push_back(r);
      sum += r;
      ++counted;
    } catch (const validation_error&) {
      result.per_target.push_back(std::nullopt);
      ++result.n_excluded;
      result.warnings.push_back("target " + std::to_string(g) +
                                ": Pearson undefined (constant vector), excluded from mean");
    }
  }
  if (counted == 0) throw validation_error("hest: no target with a defined Pearson");
  result.mean_pearson = sum / static_cast<double>(counted);
  return result;
}

BreastBmResult run_breastbm_protocol(const LabeledFeatures& train,
                                     const std::map<std::string, LabeledFeatures>& subcohorts,
                                     double l2, bool standardize) {
  train.validate(true);

  Eigen::RowVectorXd mu = Eigen::RowVectorXd::Zero(train.x.cols());
  Eigen::RowVectorXd sd = Eigen::RowVectorXd::Ones(train.x.cols());
  LabeledFeatures train_std = train;
  if (standardize) {
    mu = train.x.colwise().mean();
    for (Eigen::Index j = 0; j < train.x.cols(); ++j) {
      const double var = (train.x.col(j).array() - mu(j)).square().sum() /
                         static_cast<double>(train.x.rows() - 1);
      sd(j) = var > 0.0 ? std::sqrt(var) : 1.0;
    }
    train_std.x = (train.x.rowwise() - mu).array().rowwise() / sd.array();
  }

  const LinearModel model = fit_logistic(train_std, l2);

  BreastBmResult result;
  result.converged = model.converged;
  std::map<std::string, std::map<std::string, double>> preds_by_block;
  for (const auto& [name, cohort] : subcohorts) {
    cohort.validate(true);
    if (cohort.group_ids.empty())
      throw validation_error("subcohort " + name + " has no group_ids");
    Eigen::MatrixXd x = cohort.x;
    if (standardize) x = (x.rowwise() - mu).array().rowwise() / sd.array();
    const Eigen::VectorXd scores = predict_scores(model, x);

    std::vector<double> s(static_cast<std::size_t>(scores.size()));
    std::vector<int> labels(static_cast<std::size_t>(scores.size()));
    for (Eigen::Index i = 0; i < scores.size(); ++i) {
      s[static_cast<std::size_t>(i)] = scores(i);
      labels[static_cast<std::size_t>(i)] = cohort.y(i, 0) > 0.5 ? 1 : 0;
    }
    result.auc_per_subcohort[name] = auc(s, labels);

    auto& block_map = preds_by_block[name];
    for (Eigen::Index i = 0; i < scores.size(); ++i) {
      const auto& gid = cohort.group_ids[static_cast<std::size_t>(i)];
      if (!block_map.emplace(gid, scores(i)).second)
        throw validation_error("subcohort " + name + ": duplicate group_id " + gid);
    }
  }

  for (auto it_a = preds_by_block.begin(); it_a != preds_by_block.end(); ++it_a) {
    for (auto it_b = std::next(it_a); it_b != preds_by_block.end(); ++it_b) {
      std::vector<double> pa, pb;
      for (const auto& [gid, score] : it_a->second) {
        const auto hit = it_b->second.find(gid);
        if (hit == it_b->second.end()) continue;
        pa.push_back(score);
        pb.push_back(hit->second);
      }
      const std::string key = it_a->first + "|" + it_b->first;
      if (pa.size() < 2)
        throw validation_error("subcohort pair " + key + " shares " +
                               std::to_string(pa.size()) + " tumor blocks; need >= 2");
      result.ccc_per_pair[key] = ccc(pa, pb);
      result.shared_blocks_per_pair[key] = pa.size();
    }
  }
  return result;
}

}  // namespace tilebench
