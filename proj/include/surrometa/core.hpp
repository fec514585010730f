// Shared data types for trial-level surrogacy evaluation.
//
// Everything downstream consumes these: patient-level records grouped by
// trial, per-trial effect summaries, and the five-parameter meta estimate.

#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace surrometa {

/// Base exception for all library errors.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

using Matrix2 = Eigen::Matrix2d;
using Matrix5 = Eigen::Matrix<double, 5, 5>;
using Vector5 = Eigen::Matrix<double, 5, 1>;

/// One subject. Missing surrogate/outcome are empty optionals, never sentinels.
struct PatientRecord {
  std::vector<double> covariates;
  int treatment = 0;
  std::optional<double> surrogate;
  std::optional<double> outcome;
  double weight = 1.0;

  friend bool operator==(const PatientRecord&, const PatientRecord&) = default;
};

struct TrialDataset {
  std::string trial_id;
  std::vector<std::string> covariate_names;
  std::vector<PatientRecord> records;

  /// Column index of a named covariate, or nullopt.
  std::optional<std::size_t> covariate_index(const std::string& name) const {
    auto it = std::find(covariate_names.begin(), covariate_names.end(), name);
    if (it == covariate_names.end()) return std::nullopt;
    return static_cast<std::size_t>(it - covariate_names.begin());
  }

  friend bool operator==(const TrialDataset&, const TrialDataset&) = default;
};

using MetaDataset = std::vector<TrialDataset>;

/// Per-trial effect estimates. `cov` is the covariance of (alpha_hat,
/// beta_hat) itself, i.e. already divided by n.
struct TrialSummary {
  std::string trial_id;
  long n = 0;
  double alpha_hat = 0.0;
  double beta_hat = 0.0;
  Matrix2 cov = Matrix2::Zero();

  double var_alpha() const { return cov(0, 0); }
  double var_beta() const { return cov(1, 1); }
  double cov_alpha_beta() const { return cov(0, 1); }
};

/// Plug-in estimate of (mu_alpha, mu_beta, d_alpha, d_beta, d_alpha_beta).
///
/// `d_*` are the reported between-trial (co)variances: after nearest-PD
/// projection when `pd_adjusted` is set. `raw` holds the unprojected root of
/// the estimating equations, which is where `vcov` was evaluated.
struct ThetaEstimate {
  double mu_alpha = 0.0;
  double mu_beta = 0.0;
  double d_alpha = 0.0;
  double d_beta = 0.0;
  double d_alpha_beta = 0.0;
  Vector5 raw = Vector5::Zero();
  Matrix5 vcov = Matrix5::Zero();
  std::optional<double> rho;
  bool pd_adjusted = false;
  long n_trials = 0;

  Vector5 as_vector() const {
    Vector5 v;
    v << mu_alpha, mu_beta, d_alpha, d_beta, d_alpha_beta;
    return v;
  }
  Matrix2 between_cov() const {
    Matrix2 d;
    d << d_alpha, d_alpha_beta, d_alpha_beta, d_beta;
    return d;
  }
};

struct Violation {
  std::string trial_id;
  std::optional<std::size_t> record_index;
  std::string message;
};

/// Result of dataset validation: empty `violations` means accepted.
struct ValidationReport {
  std::vector<Violation> violations;
  bool ok() const { return violations.empty(); }
  std::string to_string() const {
    std::string out;
    for (const auto& v : violations) {
      out += v.trial_id.empty() ? std::string("<dataset>") : v.trial_id;
      if (v.record_index) out += "[" + std::to_string(*v.record_index) + "]";
      out += ": " + v.message + "\n";
    }
    return out;
  }
};

/// Checks every type invariant of a meta-dataset.
///
/// `require_outcome_arms` additionally demands two records with an observed
/// outcome in each arm, which is what effect estimation on Y needs.
inline ValidationReport validate_meta_dataset(const MetaDataset& trials,
                                              bool require_outcome_arms = true) {
  ValidationReport report;
  auto add = [&](const std::string& id, std::optional<std::size_t> idx, std::string msg) {
    report.violations.push_back({id, idx, std::move(msg)});
  };
  std::set<std::string> seen;
  const std::vector<std::string>* names = trials.empty() ? nullptr : &trials.front().covariate_names;
  for (const auto& t : trials) {
    if (t.trial_id.empty()) add(t.trial_id, std::nullopt, "empty trial_id");
    if (!seen.insert(t.trial_id).second) add(t.trial_id, std::nullopt, "duplicate trial_id");
    if (names && t.covariate_names != *names)
      add(t.trial_id, std::nullopt, "inconsistent covariate names");
    std::size_t arm_any[2] = {0, 0};
    std::size_t arm_y[2] = {0, 0};
    for (std::size_t i = 0; i < t.records.size(); ++i) {
      const auto& r = t.records[i];
      if (r.covariates.size() != t.covariate_names.size())
        add(t.trial_id, i, "inconsistent covariate dimension");
      if (r.treatment != 0 && r.treatment != 1) {
        add(t.trial_id, i, "treatment not in {0,1}");
        continue;
      }
      if (!(r.weight >= 0.0) || !std::isfinite(r.weight)) add(t.trial_id, i, "negative or non-finite weight");
      for (double x : r.covariates)
        if (!std::isfinite(x)) {
          add(t.trial_id, i, "non-finite covariate");
          break;
        }
      if (r.surrogate && !std::isfinite(*r.surrogate)) add(t.trial_id, i, "non-finite surrogate");
      if (r.outcome && !std::isfinite(*r.outcome)) add(t.trial_id, i, "non-finite outcome");
      ++arm_any[r.treatment];
      if (r.outcome) ++arm_y[r.treatment];
    }
    if (arm_any[0] == 0 || arm_any[1] == 0) {
      add(t.trial_id, std::nullopt, "arm missing");
    } else if (require_outcome_arms && (arm_y[0] < 2 || arm_y[1] < 2)) {
      add(t.trial_id, std::nullopt, "arm missing: fewer than 2 records with outcome");
    }
  }
  return report;
}

/// Throws `Error` with the full report when validation fails.
inline const MetaDataset& require_valid(const MetaDataset& trials, bool require_outcome_arms = true) {
  auto report = validate_meta_dataset(trials, require_outcome_arms);
  if (!report.ok()) throw Error("invalid meta-dataset:\n" + report.to_string());
  return trials;
}

}  // namespace surrometa
