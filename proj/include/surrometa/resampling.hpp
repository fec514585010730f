// Multiplier (Bayesian) bootstrap of the meta estimator, BCa intervals and
// a within-trial nonparametric bootstrap covariance.

#pragma once

#include "surrometa/core.hpp"
#include "surrometa/meta_plugin.hpp"
#include "surrometa/parallel.hpp"
#include "surrometa/rng.hpp"
#include "surrometa/stats.hpp"
#include "surrometa/within_trial.hpp"

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

namespace surrometa {

enum class BootStatistic { rho, theta };
enum class BootScheme { multiplier, multinomial };

struct BootstrapResult {
  BootStatistic statistic = BootStatistic::rho;
  std::vector<double> rho;                  // statistic == rho
  std::vector<std::array<double, 5>> theta;  // statistic == theta
  std::uint64_t seed = 0;
  long B = 0;
  long failures = 0;

  std::size_t size() const { return statistic == BootStatistic::rho ? rho.size() : theta.size(); }
};

struct BootstrapOptions {
  BootScheme scheme = BootScheme::multiplier;
  /// Test hook: every weight equals 1.
  bool unit_weights = false;
  unsigned threads = 1;
};

/// Bootstrap weights for replicate b (before normalization).
inline std::vector<double> bootstrap_weights(std::size_t n, std::uint64_t seed, long b, const BootstrapOptions& o) {
  std::vector<double> w(n, 1.0);
  if (o.unit_weights) return w;
  Rng rng(seed, {static_cast<std::uint64_t>(Stream::bootstrap), static_cast<std::uint64_t>(b)});
  if (o.scheme == BootScheme::multiplier) {
    for (auto& x : w) x = rng.exponential();
  } else {
    std::fill(w.begin(), w.end(), 0.0);
    for (std::size_t i = 0; i < n; ++i) w[rng.index(n)] += 1.0;
  }
  return w;
}

/// Weights rescaled to average exactly 1.
inline std::vector<double> normalize_weights(std::vector<double> w) {
  double s = 0.0;
  for (double x : w) s += x;
  const double k = static_cast<double>(w.size()) / s;
  for (auto& x : w) x *= k;
  return w;
}

/// Re-solves the weighted estimating equations B times; g_N is held fixed
/// (it is already embedded in the summaries).
inline BootstrapResult bayesian_bootstrap_meta(std::span<const TrialSummary> summaries, const PluginOptions& opts,
                                               long B, std::uint64_t seed, BootStatistic statistic,
                                               const BootstrapOptions& bopts = {}) {
  if (B < 1) throw Error("bootstrap: B must be at least 1");
  BootstrapResult res;
  res.statistic = statistic;
  res.seed = seed;
  res.B = B;
  std::vector<std::optional<std::array<double, 5>>> theta(static_cast<std::size_t>(B));
  std::vector<std::optional<double>> rho(static_cast<std::size_t>(B));
  parallel_for(static_cast<std::size_t>(B), bopts.threads, [&](std::size_t b) {
    auto w = bootstrap_weights(summaries.size(), seed, static_cast<long>(b), bopts);
    double s = 0.0;
    for (double x : w) s += x;
    if (!(s > 0.0)) return;
    try {
      const auto est = plugin_estimate(summaries, opts, std::span<const double>(w));
      rho[b] = est.rho;
      theta[b] = std::array<double, 5>{est.mu_alpha, est.mu_beta, est.d_alpha, est.d_beta, est.d_alpha_beta};
    } catch (const Error&) {
    }
  });
  for (long b = 0; b < B; ++b) {
    const auto i = static_cast<std::size_t>(b);
    if (statistic == BootStatistic::rho) {
      if (rho[i]) res.rho.push_back(*rho[i]);
      else ++res.failures;
    } else {
      if (theta[i]) res.theta.push_back(*theta[i]);
      else ++res.failures;
    }
  }
  return res;
}

struct BcaInterval {
  Interval interval;
  double z0 = 0.0;
  double acceleration = 0.0;
  bool degenerate = false;
};

/// Bias-corrected and accelerated percentile interval. z0 counts ties with
/// the point estimate as half; quantiles use linear interpolation (type 7).
inline BcaInterval bca_interval(std::span<const double> replicates, double point, std::span<const double> jackknife,
                                double level, bool clamp_unit = false) {
  if (!(level > 0.0 && level < 1.0)) throw Error("level must lie in (0, 1)");
  BcaInterval out;
  if (replicates.empty()) throw Error("bca: no replicates");
  std::vector<double> sorted(replicates.begin(), replicates.end());
  std::sort(sorted.begin(), sorted.end());
  if (sorted.front() == sorted.back()) {
    out.interval = {point, point};
    out.degenerate = true;
    return out;
  }
  const double b = static_cast<double>(sorted.size());
  double below = 0.0;
  for (double r : sorted) {
    if (r < point) below += 1.0;
    else if (r == point) below += 0.5;
  }
  const double frac = std::clamp(below / b, 0.5 / b, 1.0 - 0.5 / b);
  out.z0 = normal_quantile(frac);

  if (!jackknife.empty()) {
    double jbar = 0.0;
    for (double j : jackknife) jbar += j;
    jbar /= static_cast<double>(jackknife.size());
    double num = 0.0, den = 0.0;
    for (double j : jackknife) {
      const double d = jbar - j;
      num += d * d * d;
      den += d * d;
    }
    out.acceleration = den > 0.0 ? num / (6.0 * std::pow(den, 1.5)) : 0.0;
  }
  const double alpha = 0.5 * (1.0 - level);
  auto adjusted = [&](double zq) {
    const double t = out.z0 + zq;
    return normal_cdf(out.z0 + t / (1.0 - out.acceleration * t));
  };
  const double p_lo = adjusted(normal_quantile(alpha));
  const double p_hi = adjusted(normal_quantile(1.0 - alpha));
  out.interval = {quantile_sorted(sorted, p_lo), quantile_sorted(sorted, p_hi)};
  if (clamp_unit) {
    out.interval.lower = std::clamp(out.interval.lower, -1.0, 1.0);
    out.interval.upper = std::clamp(out.interval.upper, -1.0, 1.0);
  }
  return out;
}

/// BCa interval for rho from a bootstrap result and leave-one-trial-out
/// estimates; undefined jackknife values are skipped.
inline BcaInterval bca_rho(const BootstrapResult& res, double point, const std::vector<std::optional<double>>& jack,
                           double level) {
  std::vector<double> j;
  for (const auto& v : jack)
    if (v) j.push_back(*v);
  return bca_interval(res.rho, point, j, level, true);
}

/// Nonparametric bootstrap of (alpha_hat, beta_hat) within one trial;
/// record weights travel with resampled records. Returns the covariance.
inline Matrix2 within_trial_bootstrap_cov(const TrialDataset& trial, const SurrogateIndexModel* model,
                                          const EffectSpec& spec_alpha, const EffectSpec& spec_beta, long B,
                                          std::uint64_t seed) {
  if (B < 2) throw Error("within-trial bootstrap: B must be at least 2");
  std::optional<IndexPredictor> pred;
  if (model) pred.emplace(*model, trial.covariate_names);
  Rng rng(seed, {static_cast<std::uint64_t>(Stream::within_bootstrap)});
  TrialDataset boot;
  boot.trial_id = trial.trial_id;
  boot.covariate_names = trial.covariate_names;
  boot.records.resize(trial.records.size());
  std::vector<double> a, b;
  long attempts = 0;
  while (static_cast<long>(a.size()) < B) {
    if (++attempts > 10 * B) throw Error("within-trial bootstrap: too many failed replicates");
    for (auto& r : boot.records) r = trial.records[rng.index(trial.records.size())];
    try {
      const auto va = target_values(boot, spec_alpha.target, pred ? &*pred : nullptr);
      const auto vb = target_values(boot, spec_beta.target, pred ? &*pred : nullptr);
      const double ea = estimate_effect(boot, va, spec_alpha).estimate;
      const double eb = estimate_effect(boot, vb, spec_beta).estimate;
      a.push_back(ea);
      b.push_back(eb);
    } catch (const Error&) {
    }
  }
  const double ma = mean(a), mb = mean(b);
  Matrix2 c = Matrix2::Zero();
  for (std::size_t i = 0; i < a.size(); ++i) {
    c(0, 0) += (a[i] - ma) * (a[i] - ma);
    c(1, 1) += (b[i] - mb) * (b[i] - mb);
    c(0, 1) += (a[i] - ma) * (b[i] - mb);
  }
  c /= static_cast<double>(a.size() - 1);
  c(1, 0) = c(0, 1);
  return c;
}

}  // namespace surrometa
