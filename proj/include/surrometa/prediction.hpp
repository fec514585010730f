// Predicting the clinical effect in a new trial from its surrogate effect.
// All between-trial quantities are variances (d_alpha, d_beta), never SDs.

#pragma once

#include "surrometa/core.hpp"
#include "surrometa/stats.hpp"

#include <cmath>
#include <span>
#include <string>

namespace surrometa {

struct NewTrialEffect {
  std::string trial_id;
  double alpha0_hat = 0.0;
  double var0 = 0.0;
};

struct Sigma2Estimate {
  double raw = 0.0;      // may be negative
  double floored = 0.0;  // max(raw, 0)
  bool negative = false;
};

/// mean (beta_hat - alpha_hat)^2 - mean (v_beta + v_alpha - 2 v_alpha_beta).
inline Sigma2Estimate sigma2_index_error(std::span<const TrialSummary> summaries) {
  if (summaries.size() < 2) throw Error("sigma2_index_error: need at least 2 trials");
  double sq = 0.0, noise = 0.0;
  for (const auto& s : summaries) {
    const double d = s.beta_hat - s.alpha_hat;
    sq += d * d;
    noise += s.var_beta() + s.var_alpha() - 2.0 * s.cov_alpha_beta();
  }
  const double n = static_cast<double>(summaries.size());
  Sigma2Estimate out;
  out.raw = sq / n - noise / n;
  out.negative = out.raw < 0.0;
  out.floored = out.negative ? 0.0 : out.raw;
  return out;
}

inline double two_sided_z(double level) {
  if (!(level > 0.0 && level < 1.0)) throw Error("level must lie in (0, 1)");
  return normal_quantile(0.5 * (1.0 + level));
}

/// alpha0_hat +/- z * sqrt(var0 + sigma2).
inline Interval prediction_interval(const NewTrialEffect& nt, double sigma2, double level) {
  if (sigma2 < 0.0) throw Error("prediction_interval: sigma2 must be nonnegative");
  if (nt.var0 < 0.0) throw Error("prediction_interval: var0 must be nonnegative");
  const double half = two_sided_z(level) * std::sqrt(nt.var0 + sigma2);
  return {nt.alpha0_hat - half, nt.alpha0_hat + half};
}

struct Prediction {
  double point = 0.0;
  double variance = 0.0;
  Interval interval;
};

namespace detail {
inline Prediction normal_prediction(double point, double variance, double level) {
  const double half = two_sided_z(level) * std::sqrt(std::max(variance, 0.0));
  return {point, variance, {point - half, point + half}};
}
inline double theta_rho(const ThetaEstimate& t) {
  if (!t.rho) throw Error("prediction: rho is undefined for this estimate");
  return *t.rho;
}
}  // namespace detail

/// Shrinkage prediction: beta0 | alpha0_hat under the bivariate normal
/// random-effects model with alpha0_hat = alpha0 + N(0, var0).
inline Prediction eb_prediction(const ThetaEstimate& t, const NewTrialEffect& nt, double level) {
  if (nt.var0 < 0.0) throw Error("eb_prediction: var0 must be nonnegative");
  const double denom = t.d_alpha + nt.var0;
  if (!(denom > 0.0)) throw Error("eb_prediction: nonpositive conditioning variance");
  if (t.d_beta < 0.0) throw Error("eb_prediction: d_beta must be nonnegative");
  const double rho = detail::theta_rho(t);
  const double cov = rho * std::sqrt(t.d_alpha * t.d_beta);
  const double point = t.mu_beta + cov / denom * (nt.alpha0_hat - t.mu_alpha);
  const double var = t.d_beta - cov * cov / denom;
  return detail::normal_prediction(point, var, level);
}

/// Non-shrinkage prediction with alpha0_hat substituted for alpha0.
inline Prediction plugin_prediction(const ThetaEstimate& t, const NewTrialEffect& nt, double level) {
  if (!(t.d_alpha > 0.0)) throw Error("plugin_prediction: d_alpha must be positive");
  if (t.d_beta < 0.0) throw Error("plugin_prediction: d_beta must be nonnegative");
  const double rho = detail::theta_rho(t);
  const double point = t.mu_beta + rho * std::sqrt(t.d_beta / t.d_alpha) * (nt.alpha0_hat - t.mu_alpha);
  const double var = t.d_beta * (1.0 - rho * rho);
  return detail::normal_prediction(point, var, level);
}

}  // namespace surrometa
