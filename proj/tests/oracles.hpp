// Independent reference implementations used only by tests. Each one takes
// a deliberately different route from the library code it checks: full
// materialization + sort instead of streaming counts, Jacobi rotations
// instead of SVD, Newton instead of gradient descent, pair enumeration
// instead of rank sums.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include <Eigen/Dense>

#include "tilebench/embedding.hpp"
#include "tilebench/rng.hpp"

namespace oracle {

// Naive full-enumeration rank: materialize every candidate similarity
// (left-to-right double dot over the same float rows), sort descending,
// count entries >= the matched similarity.
inline std::size_t naive_rank(std::size_t query, const tilebench::EmbeddingMatrix& a,
                              const tilebench::EmbeddingMatrix& b) {
  const std::size_t n = a.n_tiles, d = a.dim;
  const auto dot = [d](const float* x, const float* y) {
    double s = 0.0;
    for (std::size_t k = 0; k < d; ++k)
      s += static_cast<double>(x[k]) * static_cast<double>(y[k]);
    return s;
  };
  const double matched = dot(a.row(query), b.row(query));
  std::vector<double> sims;
  sims.reserve(2 * n - 1);
  for (std::size_t j = 0; j < n; ++j)
    if (j != query) sims.push_back(dot(a.row(query), a.row(j)));
  for (std::size_t j = 0; j < n; ++j) sims.push_back(dot(a.row(query), b.row(j)));
  std::sort(sims.begin(), sims.end(), std::greater<double>());
  std::size_t rank = 0;
  while (rank < sims.size() && sims[rank] >= matched) ++rank;
  return rank;
}

inline double naive_topk_directed(const tilebench::EmbeddingMatrix& a,
                                  const tilebench::EmbeddingMatrix& b, int k) {
  std::size_t hits = 0;
  for (std::size_t i = 0; i < a.n_tiles; ++i)
    hits += naive_rank(i, a, b) <= static_cast<std::size_t>(k) ? 1 : 0;
  return static_cast<double>(hits) / static_cast<double>(a.n_tiles);
}

inline tilebench::EmbeddingMatrix random_unit_matrix(std::size_t n, std::size_t d,
                                                     std::uint64_t seed) {
  tilebench::EmbeddingMatrix m(n, d);
  tilebench::SplitMix64 rng(seed);
  for (auto& v : m.values) v = static_cast<float>(rng.next_gaussian());
  return tilebench::normalize_rows(m);
}

// Cyclic Jacobi eigensolver for small symmetric matrices; returns
// eigenvalues in decreasing order.
inline std::vector<double> jacobi_eigenvalues(Eigen::MatrixXd s) {
  const Eigen::Index n = s.rows();
  for (int sweep = 0; sweep < 100; ++sweep) {
    double off = 0.0;
    for (Eigen::Index p = 0; p < n; ++p)
      for (Eigen::Index q = p + 1; q < n; ++q) off += s(p, q) * s(p, q);
    if (off < 1e-24) break;
    for (Eigen::Index p = 0; p < n; ++p) {
      for (Eigen::Index q = p + 1; q < n; ++q) {
        if (std::fabs(s(p, q)) < 1e-300) continue;
        const double theta = (s(q, q) - s(p, p)) / (2.0 * s(p, q));
        const double t = (theta >= 0 ? 1.0 : -1.0) /
                         (std::fabs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double w = t * c;
        for (Eigen::Index i = 0; i < n; ++i) {
          const double sip = s(i, p), siq = s(i, q);
          s(i, p) = c * sip - w * siq;
          s(i, q) = w * sip + c * siq;
        }
        for (Eigen::Index i = 0; i < n; ++i) {
          const double spi = s(p, i), sqi = s(q, i);
          s(p, i) = c * spi - w * sqi;
          s(q, i) = w * spi + c * sqi;
        }
      }
    }
  }
  std::vector<double> ev(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) ev[static_cast<std::size_t>(i)] = s(i, i);
  std::sort(ev.begin(), ev.end(), std::greater<double>());
  return ev;
}

// Newton's method for the same regularized logistic objective the library
// minimizes by gradient descent. Suitable for small d only.
inline double newton_logistic_loss(const Eigen::MatrixXd& x, const Eigen::VectorXd& y01,
                                   double l2, int iters = 200) {
  const Eigen::Index n = x.rows(), d = x.cols();
  Eigen::MatrixXd xb(n, d + 1);  // bias as an extra all-ones column
  xb << x, Eigen::VectorXd::Ones(n);
  Eigen::VectorXd theta = Eigen::VectorXd::Zero(d + 1);
  for (int it = 0; it < iters; ++it) {
    const Eigen::VectorXd m = xb * theta;
    Eigen::VectorXd p(n), wdiag(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      const double s = 1.0 / (1.0 + std::exp(-m(i)));
      p(i) = s;
      wdiag(i) = std::max(s * (1.0 - s), 1e-12);
    }
    Eigen::VectorXd grad = xb.transpose() * (p - y01) / static_cast<double>(n);
    grad.head(d) += l2 * theta.head(d);
    Eigen::MatrixXd hess =
        xb.transpose() * wdiag.asDiagonal() * xb / static_cast<double>(n);
    hess.topLeftCorner(d, d).diagonal().array() += l2;
    const Eigen::VectorXd step = hess.ldlt().solve(grad);
    theta -= step;
    if (step.norm() < 1e-14) break;
  }
  const Eigen::VectorXd m = xb * theta;
  double loss = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const double ysign = y01(i) > 0.5 ? 1.0 : -1.0;
    const double u = -ysign * m(i);
    loss += u > 30 ? u : (u < -30 ? std::exp(u) : std::log1p(std::exp(u)));
  }
  return loss / static_cast<double>(n) + 0.5 * l2 * theta.head(d).squaredNorm();
}

// AUC by direct enumeration of all positive-negative pairs.
inline double pairwise_auc(const std::vector<double>& scores, const std::vector<int>& labels) {
  double wins = 0.0;
  std::size_t pairs = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (labels[i] != 1) continue;
    for (std::size_t j = 0; j < scores.size(); ++j) {
      if (labels[j] != 0) continue;
      ++pairs;
      if (scores[i] > scores[j]) wins += 1.0;
      else if (scores[i] == scores[j]) wins += 0.5;
    }
  }
  return wins / static_cast<double>(pairs);
}

// Exact one-sided Wilcoxon p by enumerating all 2^n sign patterns.
inline double enumerated_wilcoxon_p(const std::vector<double>& ranks, double w_obs) {
  const std::size_t n = ranks.size();
  std::size_t hits = 0;
  const std::size_t total = std::size_t{1} << n;
  for (std::size_t mask = 0; mask < total; ++mask) {
    double w = 0.0;
    for (std::size_t i = 0; i < n; ++i)
      if (mask & (std::size_t{1} << i)) w += ranks[i];
    if (w >= w_obs) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(total);
}

}  // namespace oracle
