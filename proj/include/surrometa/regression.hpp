// Weighted least squares and weighted logistic regression (IRLS).

#pragma once

#include "surrometa/core.hpp"
#include "surrometa/stats.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <limits>
#include <string>

namespace surrometa {

class RankDeficientError : public Error {
 public:
  RankDeficientError(std::size_t column, const std::string& what)
      : Error(what + " (rank deficient at column " + std::to_string(column) + ")"), column_(column) {}
  std::size_t column() const { return column_; }

 private:
  std::size_t column_;
};

namespace detail {

/// First column index j such that columns [0, j] are linearly dependent.
inline std::size_t first_dependent_column(const Eigen::MatrixXd& x) {
  for (Eigen::Index j = 0; j < x.cols(); ++j) {
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(x.leftCols(j + 1));
    qr.setThreshold(1e-10);
    if (qr.rank() < j + 1) return static_cast<std::size_t>(j);
  }
  return static_cast<std::size_t>(x.cols());
}

inline Eigen::MatrixXd scale_rows(const Eigen::MatrixXd& x, const Eigen::VectorXd& s) {
  return s.asDiagonal() * x;
}

}  // namespace detail

/// Minimizes sum_i w_i (y_i - x_i'b)^2 via column-pivoted QR on the
/// sqrt(w)-scaled system, with one step of iterative refinement.
inline Eigen::VectorXd fit_wls(const Eigen::MatrixXd& design, const Eigen::VectorXd& response,
                               const Eigen::VectorXd& weights) {
  if (design.rows() != response.size() || design.rows() != weights.size())
    throw Error("fit_wls: dimension mismatch");
  if (design.rows() < design.cols()) throw RankDeficientError(static_cast<std::size_t>(design.rows()), "fit_wls: fewer rows than columns");
  const Eigen::VectorXd sw = weights.cwiseMax(0.0).cwiseSqrt();
  const Eigen::MatrixXd xs = detail::scale_rows(design, sw);
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(xs);
  qr.setThreshold(1e-10);
  if (qr.rank() < design.cols()) throw RankDeficientError(detail::first_dependent_column(xs), "fit_wls");
  const Eigen::VectorXd ys = sw.cwiseProduct(response);
  Eigen::VectorXd b = qr.solve(ys);
  const Eigen::VectorXd r = ys - xs * b;
  b += qr.solve(r);
  return b;
}

/// Norm of the weighted normal-equation gradient X'W(y - Xb).
inline double wls_gradient_norm(const Eigen::MatrixXd& design, const Eigen::VectorXd& response,
                                const Eigen::VectorXd& weights, const Eigen::VectorXd& b) {
  return (design.transpose() * weights.cwiseProduct(response - design * b)).norm();
}

struct LogisticOptions {
  int max_iter = 100;
  double tolerance = 1e-8;
  double separation_bound = 30.0;
};

struct LogisticFit {
  Eigen::VectorXd coefficients;
  double log_likelihood = -std::numeric_limits<double>::infinity();
  double score_norm = std::numeric_limits<double>::infinity();
  int iterations = 0;
  bool converged = false;
  bool separation = false;
};

inline double logistic_log_likelihood(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, const Eigen::VectorXd& w,
                                      const Eigen::VectorXd& b) {
  const Eigen::VectorXd eta = x * b;
  double ll = 0.0;
  for (Eigen::Index i = 0; i < eta.size(); ++i) {
    // log(1 + exp(eta)) computed stably
    const double e = eta[i];
    const double softplus = e > 0 ? e + std::log1p(std::exp(-e)) : std::log1p(std::exp(e));
    ll += w[i] * (y[i] * e - softplus);
  }
  return ll;
}

inline Eigen::VectorXd logistic_score(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, const Eigen::VectorXd& w,
                                      const Eigen::VectorXd& b) {
  const Eigen::VectorXd eta = x * b;
  Eigen::VectorXd r(eta.size());
  for (Eigen::Index i = 0; i < eta.size(); ++i) r[i] = w[i] * (y[i] - expit(eta[i]));
  return x.transpose() * r;
}

/// Newton-Raphson / IRLS for weighted logistic regression with step halving.
/// Non-convergence and separation are flagged on the result, not thrown.
inline LogisticFit fit_logistic_irls(const Eigen::MatrixXd& design, const Eigen::VectorXd& response,
                                     const Eigen::VectorXd& weights, const LogisticOptions& opts = {}) {
  const Eigen::Index n = design.rows(), p = design.cols();
  if (response.size() != n || weights.size() != n) throw Error("fit_logistic_irls: dimension mismatch");
  for (Eigen::Index i = 0; i < n; ++i)
    if (response[i] != 0.0 && response[i] != 1.0) throw Error("fit_logistic_irls: response must be 0/1");
  {
    const Eigen::MatrixXd xs = detail::scale_rows(design, weights.cwiseMax(0.0).cwiseSqrt());
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(xs);
    qr.setThreshold(1e-10);
    if (qr.rank() < p) throw RankDeficientError(detail::first_dependent_column(xs), "fit_logistic_irls");
  }

  LogisticFit fit;
  fit.coefficients = Eigen::VectorXd::Zero(p);
  fit.log_likelihood = logistic_log_likelihood(design, response, weights, fit.coefficients);
  Eigen::VectorXd score = logistic_score(design, response, weights, fit.coefficients);
  fit.score_norm = score.norm();

  for (int it = 0; it < opts.max_iter && fit.score_norm >= opts.tolerance; ++it) {
    fit.iterations = it + 1;
    const Eigen::VectorXd eta = design * fit.coefficients;
    Eigen::VectorXd v(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      const double mu = expit(eta[i]);
      v[i] = weights[i] * mu * (1.0 - mu);
    }
    const Eigen::MatrixXd info = design.transpose() * v.asDiagonal() * design;
    Eigen::LDLT<Eigen::MatrixXd> ldlt(info);
    Eigen::VectorXd step = ldlt.solve(score);
    if (!step.allFinite()) step = info.completeOrthogonalDecomposition().solve(score);

    double scale = 1.0;
    bool accepted = false;
    for (int half = 0; half < 40; ++half, scale *= 0.5) {
      Eigen::VectorXd cand = fit.coefficients + scale * step;
      const double ll = logistic_log_likelihood(design, response, weights, cand);
      if (std::isfinite(ll) && ll >= fit.log_likelihood) {
        fit.coefficients = std::move(cand);
        fit.log_likelihood = ll;
        accepted = true;
        break;
      }
    }
    score = logistic_score(design, response, weights, fit.coefficients);
    fit.score_norm = score.norm();
    if (!accepted) break;
    if (fit.coefficients.cwiseAbs().maxCoeff() > opts.separation_bound) {
      fit.separation = true;
      break;
    }
  }
  fit.converged = fit.score_norm < opts.tolerance;
  if (fit.coefficients.size() > 0 && fit.coefficients.cwiseAbs().maxCoeff() > opts.separation_bound)
    fit.separation = true;
  return fit;
}

}  // namespace surrometa
