// Within-trial treatment effects and their joint covariance.
//
// Each estimator returns the estimate together with per-record influence
// contributions c_i, scaled so that Var(estimate) = sum_i c_i^2. Stacking
// the contributions of two estimators computed on the same records gives
// their covariance, including the cross term.

#pragma once

#include "surrometa/core.hpp"
#include "surrometa/features.hpp"
#include "surrometa/surrogate_index.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace surrometa {

enum class Contrast { mean_difference, log_relative_risk };
enum class Target { surrogate_raw, surrogate_index, clinical };

struct EffectSpec {
  Contrast contrast = Contrast::mean_difference;
  std::vector<std::string> adjust_covariates;
  /// Extra adjustment terms (e.g. spline bases); knots are placed per trial.
  FeatureSpec extra_terms;
  Target target = Target::clinical;
  /// Rescales arm contributions by n_k/(n_k-1) in variance (sample
  /// covariance instead of the plug-in HC0 form). Unadjusted contrasts only.
  bool unbiased_variance = false;

  bool adjusted() const { return !adjust_covariates.empty() || !extra_terms.terms.empty(); }
};

struct EffectEstimate {
  double estimate = 0.0;
  std::vector<double> influence;  // one entry per trial record; 0 where unused
};

namespace detail {

struct ArmSums {
  double w[2] = {0, 0};
  double wv[2] = {0, 0};
  std::size_t n[2] = {0, 0};
};

inline ArmSums arm_sums(const TrialDataset& trial, std::span<const std::optional<double>> values) {
  ArmSums s;
  for (std::size_t i = 0; i < trial.records.size(); ++i) {
    if (!values[i]) continue;
    const auto& r = trial.records[i];
    const int z = r.treatment;
    s.w[z] += r.weight;
    s.wv[z] += r.weight * *values[i];
    if (r.weight > 0) ++s.n[z];
  }
  if (s.n[0] == 0 || s.n[1] == 0) throw Error("trial '" + trial.trial_id + "': empty arm after missingness filtering");
  return s;
}

inline double unbiased_scale(std::size_t n) {
  return n > 1 ? std::sqrt(static_cast<double>(n) / static_cast<double>(n - 1)) : 1.0;
}

}  // namespace detail

/// Covariate-adjusted mean difference: mean over subjects of model
/// predictions at Z=1 minus Z=0 from a weighted linear model with
/// intercept, treatment and the adjustment terms. With no adjustment it is
/// the weighted difference in arm means.
inline EffectEstimate mean_difference_ancova(const TrialDataset& trial, std::span<const std::optional<double>> values,
                                             const std::vector<std::string>& adjust,
                                             const FeatureSpec& extra_terms = {}, bool unbiased_variance = false) {
  const std::size_t n = trial.records.size();
  if (values.size() != n) throw Error("mean_difference_ancova: value count does not match records");
  EffectEstimate out;
  out.influence.assign(n, 0.0);

  if (adjust.empty() && extra_terms.terms.empty()) {
    const auto s = detail::arm_sums(trial, values);
    const double m1 = s.wv[1] / s.w[1], m0 = s.wv[0] / s.w[0];
    out.estimate = m1 - m0;
    const double k1 = unbiased_variance ? detail::unbiased_scale(s.n[1]) : 1.0;
    const double k0 = unbiased_variance ? detail::unbiased_scale(s.n[0]) : 1.0;
    for (std::size_t i = 0; i < n; ++i) {
      if (!values[i]) continue;
      const auto& r = trial.records[i];
      out.influence[i] = r.treatment == 1 ? k1 * r.weight * (*values[i] - m1) / s.w[1]
                                          : -k0 * r.weight * (*values[i] - m0) / s.w[0];
    }
    return out;
  }

  std::vector<PatientRecord> used;
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < n; ++i)
    if (values[i]) {
      used.push_back(trial.records[i]);
      idx.push_back(i);
    }
  (void)detail::arm_sums(trial, values);

  FeatureSpec spec;
  spec.terms.push_back(Term::intercept());
  for (const auto& a : adjust) spec.terms.push_back(Term::raw(a));
  for (const auto& t : extra_terms.terms) spec.terms.push_back(t);
  spec = resolve_knots(std::move(spec), used, trial.covariate_names);
  DesignBuilder builder(spec, trial.covariate_names);

  const auto m = static_cast<Eigen::Index>(used.size());
  const auto p = static_cast<Eigen::Index>(builder.columns() + 1);
  if (m < p) throw Error("trial '" + trial.trial_id + "': fewer records than ANCOVA parameters");
  Eigen::MatrixXd x(m, p);
  Eigen::VectorXd v(m), w(m);
  Eigen::RowVectorXd row;
  for (Eigen::Index i = 0; i < m; ++i) {
    const auto& r = used[static_cast<std::size_t>(i)];
    row = builder.row(r);
    x(i, 0) = row[0];
    x(i, 1) = static_cast<double>(r.treatment);
    x.row(i).tail(p - 2) = row.tail(p - 2);
    v[i] = *values[idx[static_cast<std::size_t>(i)]];
    w[i] = r.weight;
  }
  const Eigen::MatrixXd xtwx = x.transpose() * w.asDiagonal() * x;
  Eigen::LDLT<Eigen::MatrixXd> ldlt(xtwx);
  const auto d = ldlt.vectorD();
  if (ldlt.info() != Eigen::Success || d.minCoeff() <= 1e-12 * d.cwiseAbs().maxCoeff())
    throw Error("trial '" + trial.trial_id + "': rank-deficient ANCOVA design");
  const Eigen::VectorXd b = ldlt.solve(x.transpose() * w.cwiseProduct(v));
  const Eigen::VectorXd u = ldlt.solve(Eigen::VectorXd::Unit(p, 1));
  // No treatment interactions, so averaged predictions differ by b[1].
  out.estimate = b[1];
  const Eigen::VectorXd resid = v - x * b;
  const Eigen::VectorXd lever = x * u;
  for (Eigen::Index i = 0; i < m; ++i) out.influence[idx[static_cast<std::size_t>(i)]] = lever[i] * w[i] * resid[i];
  return out;
}

/// log(m1/m0) of weighted arm means with its delta-method influence.
inline EffectEstimate log_relative_risk(const TrialDataset& trial, std::span<const std::optional<double>> values,
                                        bool unbiased_variance = false) {
  const std::size_t n = trial.records.size();
  if (values.size() != n) throw Error("log_relative_risk: value count does not match records");
  const auto s = detail::arm_sums(trial, values);
  const double m1 = s.wv[1] / s.w[1], m0 = s.wv[0] / s.w[0];
  if (!(m1 > 0.0) || !(m0 > 0.0))
    throw Error("trial '" + trial.trial_id + "': nonpositive arm mean under log relative risk");
  EffectEstimate out;
  out.estimate = std::log(m1 / m0);
  out.influence.assign(n, 0.0);
  const double k1 = unbiased_variance ? detail::unbiased_scale(s.n[1]) : 1.0;
  const double k0 = unbiased_variance ? detail::unbiased_scale(s.n[0]) : 1.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (!values[i]) continue;
    const auto& r = trial.records[i];
    out.influence[i] = r.treatment == 1 ? k1 * r.weight * (*values[i] - m1) / (s.w[1] * m1)
                                        : -k0 * r.weight * (*values[i] - m0) / (s.w[0] * m0);
  }
  return out;
}

/// Per-record values of an effect target; missing where not evaluable.
inline std::vector<std::optional<double>> target_values(const TrialDataset& trial, Target target,
                                                        const IndexPredictor* index) {
  std::vector<std::optional<double>> v(trial.records.size());
  for (std::size_t i = 0; i < trial.records.size(); ++i) {
    const auto& r = trial.records[i];
    switch (target) {
      case Target::surrogate_raw: v[i] = r.surrogate; break;
      case Target::clinical: v[i] = r.outcome; break;
      case Target::surrogate_index:
        if (!index) throw Error("surrogate_index target requires a fitted model");
        if (r.surrogate) v[i] = (*index)(r);
        break;
    }
  }
  return v;
}

inline EffectEstimate estimate_effect(const TrialDataset& trial, std::span<const std::optional<double>> values,
                                      const EffectSpec& spec) {
  if (spec.contrast == Contrast::log_relative_risk) {
    if (spec.adjusted()) throw Error("log relative risk does not support covariate adjustment");
    return log_relative_risk(trial, values, spec.unbiased_variance);
  }
  if (spec.unbiased_variance && spec.adjusted())
    throw Error("unbiased_variance applies to unadjusted contrasts only");
  return mean_difference_ancova(trial, values, spec.adjust_covariates, spec.extra_terms, spec.unbiased_variance);
}

/// Cross-product of influence contributions: sum_i a_i b_i.
inline double influence_cross(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

/// (alpha_hat, beta_hat) and their joint covariance for one trial.
/// `index` may be null when neither spec targets the surrogate index.
inline TrialSummary joint_effects(const TrialDataset& trial, const IndexPredictor* index, const EffectSpec& spec_alpha,
                                  const EffectSpec& spec_beta) {
  const auto va = target_values(trial, spec_alpha.target, index);
  const auto vb = target_values(trial, spec_beta.target, index);
  const auto a = estimate_effect(trial, va, spec_alpha);
  const auto b = estimate_effect(trial, vb, spec_beta);
  TrialSummary s;
  s.trial_id = trial.trial_id;
  s.n = static_cast<long>(trial.records.size());
  s.alpha_hat = a.estimate;
  s.beta_hat = b.estimate;
  s.cov(0, 0) = influence_cross(a.influence, a.influence);
  s.cov(1, 1) = influence_cross(b.influence, b.influence);
  s.cov(0, 1) = s.cov(1, 0) = influence_cross(a.influence, b.influence);
  return s;
}

/// Convenience overload that binds the model to the trial's covariates.
inline TrialSummary joint_effects(const TrialDataset& trial, const SurrogateIndexModel* model,
                                  const EffectSpec& spec_alpha, const EffectSpec& spec_beta) {
  if (!model) return joint_effects(trial, static_cast<const IndexPredictor*>(nullptr), spec_alpha, spec_beta);
  IndexPredictor pred(*model, trial.covariate_names);
  return joint_effects(trial, &pred, spec_alpha, spec_beta);
}

struct SummaryBatch {
  std::vector<TrialSummary> summaries;
  std::vector<std::pair<std::string, std::string>> failures;  // (trial_id, reason)
};

/// Summaries for every trial; per-trial failures are collected, not thrown.
inline SummaryBatch summarize_trials(const MetaDataset& trials, const SurrogateIndexModel* model,
                                     const EffectSpec& spec_alpha, const EffectSpec& spec_beta) {
  SummaryBatch out;
  for (const auto& t : trials) {
    try {
      out.summaries.push_back(joint_effects(t, model, spec_alpha, spec_beta));
    } catch (const Error& e) {
      out.failures.emplace_back(t.trial_id, e.what());
    }
  }
  return out;
}

}  // namespace surrometa
