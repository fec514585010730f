// Plug-in meta-analytic estimator of (mu_alpha, mu_beta, d_alpha, d_beta,
// d_alpha_beta) with measurement-error correction, its sandwich covariance,
// the derived trial-level correlation and Fisher-z intervals.

#pragma once

#include "surrometa/core.hpp"
#include "surrometa/stats.hpp"

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>

#include <cmath>
#include <optional>
#include <span>
#include <vector>

namespace surrometa {

enum class PdProjection { off, on_demand };

struct PluginOptions {
  bool bessel_correction = true;
  bool sandwich_small_sample = true;
  bool use_t_quantiles = true;
  /// t quantiles are used for N below this; normal quantiles at or above.
  long t_quantile_max_trials = 30;
  PdProjection pd_projection = PdProjection::on_demand;
  double fisher_z_threshold = 0.999;
  double level = 0.95;
  /// Minimum number of trials; 3 normally, tests may relax to 2.
  long min_trials = 3;

  void validate() const {
    if (!(level > 0.0 && level < 1.0)) throw Error("level must lie in (0, 1)");
    if (!(fisher_z_threshold > 0.0 && fisher_z_threshold <= 1.0)) throw Error("fisher_z_threshold must lie in (0, 1]");
  }
};

/// Frobenius-nearest positive semi-definite 2x2 matrix, eigenvalues clipped at eps.
inline Matrix2 nearest_pd(const Matrix2& m, double eps = 1e-10) {
  const Matrix2 sym = 0.5 * (m + m.transpose());
  Eigen::SelfAdjointEigenSolver<Matrix2> es(sym);
  const Eigen::Vector2d ev = es.eigenvalues();
  if (ev.minCoeff() >= 0.5 * eps) return sym;  // idempotent under eigen rounding
  const Eigen::Vector2d clipped = ev.cwiseMax(eps);
  Matrix2 out = es.eigenvectors() * clipped.asDiagonal() * es.eigenvectors().transpose();
  out(1, 0) = out(0, 1);
  return out;
}

inline bool is_psd(const Matrix2& m) { return m(0, 0) >= 0.0 && m(1, 1) >= 0.0 && m(0, 0) * m(1, 1) - m(0, 1) * m(1, 0) >= 0.0; }

/// Estimating function for one trial. With `bessel_n` set, the squared and
/// cross terms carry the factor N/(N-1).
inline Vector5 estimating_function(const Vector5& theta, const TrialSummary& s, std::optional<long> bessel_n = std::nullopt) {
  const double k = bessel_n ? static_cast<double>(*bessel_n) / static_cast<double>(*bessel_n - 1) : 1.0;
  const double ea = s.alpha_hat - theta[0];
  const double eb = s.beta_hat - theta[1];
  Vector5 phi;
  phi << ea, eb, k * ea * ea - s.cov(0, 0) - theta[2], k * eb * eb - s.cov(1, 1) - theta[3],
      k * ea * eb - s.cov(0, 1) - theta[4];
  return phi;
}

/// Jacobian of the estimating function with respect to theta for one trial.
inline Matrix5 estimating_jacobian(const Vector5& theta, const TrialSummary& s, std::optional<long> bessel_n = std::nullopt) {
  const double k = bessel_n ? static_cast<double>(*bessel_n) / static_cast<double>(*bessel_n - 1) : 1.0;
  const double ea = s.alpha_hat - theta[0];
  const double eb = s.beta_hat - theta[1];
  Matrix5 j = -Matrix5::Identity();
  j(2, 0) = -2.0 * k * ea;
  j(3, 1) = -2.0 * k * eb;
  j(4, 0) = -k * eb;
  j(4, 1) = -k * ea;
  return j;
}

namespace detail {

inline void check_summaries(std::span<const TrialSummary> summaries) {
  for (const auto& s : summaries)
    if (!std::isfinite(s.alpha_hat) || !std::isfinite(s.beta_hat) || !s.cov.allFinite())
      throw Error("non-finite summary fields in trial '" + s.trial_id + "'");
}

/// Root of the (weighted) estimating equations. Weights are normalized to
/// mean 1; null weights means all ones.
inline Vector5 solve_root(std::span<const TrialSummary> summaries, std::span<const double> weights, bool bessel) {
  const auto n = static_cast<double>(summaries.size());
  double wsum = 0.0;
  if (!weights.empty())
    for (double w : weights) wsum += w;
  auto wt = [&](std::size_t i) { return weights.empty() ? 1.0 : weights[i] * n / wsum; };
  double sa = 0.0, sb = 0.0;
  for (std::size_t i = 0; i < summaries.size(); ++i) {
    sa += wt(i) * summaries[i].alpha_hat;
    sb += wt(i) * summaries[i].beta_hat;
  }
  const double ma = sa / n, mb = sb / n;
  double saa = 0.0, sbb = 0.0, sab = 0.0, va = 0.0, vb = 0.0, vab = 0.0;
  for (std::size_t i = 0; i < summaries.size(); ++i) {
    const auto& s = summaries[i];
    const double w = wt(i);
    const double ea = s.alpha_hat - ma, eb = s.beta_hat - mb;
    saa += w * ea * ea;
    sbb += w * eb * eb;
    sab += w * ea * eb;
    va += w * s.cov(0, 0);
    vb += w * s.cov(1, 1);
    vab += w * s.cov(0, 1);
  }
  const double div = bessel ? n - 1.0 : n;
  Vector5 theta;
  theta << ma, mb, saa / div - va / n, sbb / div - vb / n, sab / div - vab / n;
  return theta;
}

}  // namespace detail

/// Empirical mean of the estimating function over trials.
inline Vector5 mean_estimating_function(const Vector5& theta, std::span<const TrialSummary> summaries, bool bessel) {
  Vector5 m = Vector5::Zero();
  const auto n = static_cast<long>(summaries.size());
  for (const auto& s : summaries) m += estimating_function(theta, s, bessel ? std::optional<long>(n) : std::nullopt);
  return m / static_cast<double>(n);
}

/// Sandwich covariance A^-1 B A^-T / N evaluated at `theta`, which must be
/// the root of the estimating equations.
inline Matrix5 sandwich_covariance(std::span<const TrialSummary> summaries, const Vector5& theta, const PluginOptions& opts) {
  const auto n = static_cast<long>(summaries.size());
  if (n < 2) throw Error("sandwich covariance needs at least 2 trials");
  const std::optional<long> bn = opts.bessel_correction ? std::optional<long>(n) : std::nullopt;
  Matrix5 a = Matrix5::Zero(), b = Matrix5::Zero();
  for (const auto& s : summaries) {
    a += estimating_jacobian(theta, s, bn);
    const Vector5 phi = estimating_function(theta, s, bn);
    b += phi * phi.transpose();
  }
  const double nd = static_cast<double>(n);
  a /= nd;
  b /= nd;
  double mag = 1.0;
  for (const auto& s : summaries) mag = std::max({mag, std::abs(s.alpha_hat), std::abs(s.beta_hat)});
  const double off = (a + Matrix5::Identity()).cwiseAbs().rowwise().sum().maxCoeff();
  if (off >= 1e-8 * mag) throw Error("sandwich: derivative matrix is not -I; theta is not at the root");
  if (opts.sandwich_small_sample) b *= nd / (nd - 1.0);
  const Matrix5 ainv = a.inverse();
  Matrix5 v = ainv * b * ainv.transpose() / nd;
  return 0.5 * (v + v.transpose());
}

/// Gradient of rho = d_ab / sqrt(d_a d_b) with respect to theta.
inline Vector5 rho_gradient(double d_a, double d_b, double rho) {
  Vector5 g = Vector5::Zero();
  g[2] = -rho / (2.0 * d_a);
  g[3] = -rho / (2.0 * d_b);
  g[4] = 1.0 / std::sqrt(d_a * d_b);
  return g;
}

/// Delta-method variance of rho from the full 5x5 covariance.
inline std::optional<double> rho_variance(const ThetaEstimate& t) {
  if (!t.rho || !(t.d_alpha > 0) || !(t.d_beta > 0)) return std::nullopt;
  const Vector5 g = rho_gradient(t.d_alpha, t.d_beta, *t.rho);
  return g.dot(t.vcov * g);
}

/// Plug-in estimate with sandwich covariance and (optionally) PD projection.
/// `weights` (mean-normalized internally) reweights trials for the
/// multiplier bootstrap; the sandwich is skipped for weighted calls.
inline ThetaEstimate plugin_estimate(std::span<const TrialSummary> summaries, const PluginOptions& opts,
                                     std::span<const double> weights = {}) {
  opts.validate();
  const auto n = static_cast<long>(summaries.size());
  if (n < opts.min_trials || n < 2) throw Error("plugin_estimate: at least " + std::to_string(std::max(2L, opts.min_trials)) + " trials required");
  detail::check_summaries(summaries);
  ThetaEstimate est;
  est.n_trials = n;
  est.raw = detail::solve_root(summaries, weights, opts.bessel_correction);
  est.mu_alpha = est.raw[0];
  est.mu_beta = est.raw[1];
  est.d_alpha = est.raw[2];
  est.d_beta = est.raw[3];
  est.d_alpha_beta = est.raw[4];
  if (weights.empty()) est.vcov = sandwich_covariance(summaries, est.raw, opts);

  Matrix2 d = est.between_cov();
  if (opts.pd_projection == PdProjection::on_demand) {
    Eigen::SelfAdjointEigenSolver<Matrix2> es(d);
    if (es.eigenvalues().minCoeff() < 0.0) {
      d = nearest_pd(d);
      est.pd_adjusted = true;
      est.d_alpha = d(0, 0);
      est.d_beta = d(1, 1);
      est.d_alpha_beta = d(0, 1);
    }
  }
  if (est.d_alpha > 0.0 && est.d_beta > 0.0) {
    const double r = est.d_alpha_beta / std::sqrt(est.d_alpha * est.d_beta);
    est.rho = std::clamp(r, -1.0, 1.0);
  }
  return est;
}

inline ThetaEstimate plugin_estimate(const std::vector<TrialSummary>& summaries, const PluginOptions& opts = {}) {
  return plugin_estimate(std::span<const TrialSummary>(summaries), opts);
}

/// Critical value for a two-sided interval at opts.level with N trials.
inline double critical_value(long n_trials, const PluginOptions& opts) {
  const double p = 0.5 * (1.0 + opts.level);
  if (opts.use_t_quantiles && n_trials < opts.t_quantile_max_trials && n_trials >= 2)
    return t_quantile(p, static_cast<double>(n_trials - 1));
  return normal_quantile(p);
}

/// Fisher-z interval for rho given its standard error; falls back to a
/// plain Wald interval above the threshold. Endpoints clamped to [-1, 1].
inline Interval fisher_z_interval(double rho, double se, double q, double threshold) {
  Interval ci;
  if (std::abs(rho) <= threshold && std::abs(rho) < 1.0) {
    const double z = std::atanh(rho);
    const double se_z = se / (1.0 - rho * rho);
    ci = {std::tanh(z - q * se_z), std::tanh(z + q * se_z)};
  } else {
    ci = {rho - q * se, rho + q * se};
  }
  ci.lower = std::clamp(ci.lower, -1.0, 1.0);
  ci.upper = std::clamp(ci.upper, -1.0, 1.0);
  return ci;
}

/// Sandwich + delta-method confidence interval for rho on the Fisher-z scale.
inline Interval rho_ci_fisher_z(const ThetaEstimate& theta, long n_trials, const PluginOptions& opts) {
  opts.validate();
  if (!theta.rho) throw Error("rho is undefined");
  const auto var = rho_variance(theta);
  if (!var) throw Error("rho variance is undefined");
  return fisher_z_interval(*theta.rho, std::sqrt(std::max(0.0, *var)), critical_value(n_trials, opts),
                           opts.fisher_z_threshold);
}

/// Leave-one-trial-out rho estimates (nullopt where undefined or failing).
inline std::vector<std::optional<double>> jackknife_rho(std::span<const TrialSummary> summaries, PluginOptions opts) {
  std::vector<std::optional<double>> out;
  opts.min_trials = std::min(opts.min_trials, static_cast<long>(summaries.size()) - 1);
  std::vector<TrialSummary> sub;
  for (std::size_t i = 0; i < summaries.size(); ++i) {
    sub.clear();
    for (std::size_t j = 0; j < summaries.size(); ++j)
      if (j != i) sub.push_back(summaries[j]);
    try {
      out.push_back(plugin_estimate(std::span<const TrialSummary>(sub), opts, std::span<const double>{}).rho);
    } catch (const Error&) {
      out.push_back(std::nullopt);
    }
  }
  return out;
}

}  // namespace surrometa
