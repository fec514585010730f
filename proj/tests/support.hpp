// Shared fixtures for the unit and acceptance tests.

#pragma once

#include "surrometa/core.hpp"
#include "surrometa/rng.hpp"

#include <optional>
#include <string>
#include <vector>

namespace surrometa::testing {

inline PatientRecord rec(int z, std::optional<double> y, std::optional<double> s = std::nullopt,
                         std::vector<double> x = {}, double w = 1.0) {
  PatientRecord r;
  r.treatment = z;
  r.outcome = y;
  r.surrogate = s;
  r.covariates = std::move(x);
  r.weight = w;
  return r;
}

inline TrialDataset trial(std::string id, std::vector<PatientRecord> records, std::vector<std::string> names = {}) {
  return {std::move(id), std::move(names), std::move(records)};
}

inline TrialSummary summary(double a, double b, double va = 0.0, double vb = 0.0, double vab = 0.0, long n = 100,
                            std::string id = "t") {
  TrialSummary s;
  s.trial_id = std::move(id);
  s.n = n;
  s.alpha_hat = a;
  s.beta_hat = b;
  s.cov << va, vab, vab, vb;
  return s;
}

/// The 3-trial fixture: (1,1), (2,3), (3,2) with cov diag(0.1, 0.1).
inline std::vector<TrialSummary> three_trials() {
  return {summary(1, 1, 0.1, 0.1, 0.0, 100, "A"), summary(2, 3, 0.1, 0.1, 0.0, 100, "B"),
          summary(3, 2, 0.1, 0.1, 0.0, 100, "C")};
}

/// Summaries drawn from a bivariate normal random-effects model plus
/// within-trial noise with a random covariance.
inline std::vector<TrialSummary> random_summaries(std::size_t n, std::uint64_t seed, double rho = 0.6,
                                                  double noise = 0.05) {
  Rng rng(seed, {static_cast<std::uint64_t>(Stream::fixture)});
  std::vector<TrialSummary> out;
  for (std::size_t i = 0; i < n; ++i) {
    const double u = rng.normal(), v = rng.normal();
    const double ta = 1.0 + u;
    const double tb = 0.5 + 0.8 * (rho * u + std::sqrt(1.0 - rho * rho) * v);
    const double va = noise * (0.5 + rng.uniform()), vb = noise * (0.5 + rng.uniform());
    const double r = rng.uniform(-0.5, 0.5);
    const double e1 = rng.normal(), e2 = rng.normal();
    const double ea = std::sqrt(va) * e1;
    const double eb = std::sqrt(vb) * (r * e1 + std::sqrt(1.0 - r * r) * e2);
    out.push_back(summary(ta + ea, tb + eb, va, vb, r * std::sqrt(va * vb), 200, "T" + std::to_string(i)));
  }
  return out;
}

}  // namespace surrometa::testing
