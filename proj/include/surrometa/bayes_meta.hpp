// Bayesian bivariate random-effects meta-analysis. Latent trial effects are
// integrated out analytically, so the sampler only moves in the 5 (or 4,
// under the proportional constraint) hyperparameters.

#pragma once

#include "surrometa/core.hpp"
#include "surrometa/parallel.hpp"
#include "surrometa/rng.hpp"
#include "surrometa/stats.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <numbers>
#include <span>
#include <string>
#include <vector>

namespace surrometa {

enum class Constraint { free, proportional };

struct HyperParams {
  double mu_alpha = 0.0;
  double mu_beta = 0.0;
  double sd_alpha = 1.0;
  double sd_beta = 1.0;
  double rho = 0.0;
  Constraint constraint = Constraint::free;

  std::array<double, 5> values() const { return {mu_alpha, mu_beta, sd_alpha, sd_beta, rho}; }
  Matrix2 between_cov() const {
    Matrix2 d;
    d << sd_alpha * sd_alpha, rho * sd_alpha * sd_beta, rho * sd_alpha * sd_beta, sd_beta * sd_beta;
    return d;
  }
};

inline const std::array<const char*, 5> kHyperNames = {"mu_alpha", "mu_beta", "sd_alpha", "sd_beta", "rho"};

inline std::size_t unconstrained_dim(Constraint c) { return c == Constraint::free ? 5 : 4; }

/// Maps the unconstrained vector (means, log SDs, atanh rho) to hyperparameters.
inline HyperParams to_hyper(std::span<const double> x, Constraint c) {
  HyperParams h;
  h.constraint = c;
  std::size_t i = 0;
  h.mu_alpha = x[i++];
  if (c == Constraint::free) h.mu_beta = x[i++];
  h.sd_alpha = std::exp(x[i++]);
  h.sd_beta = std::exp(x[i++]);
  h.rho = std::tanh(x[i++]);
  if (c == Constraint::proportional) h.mu_beta = h.rho * h.sd_beta / h.sd_alpha * h.mu_alpha;
  return h;
}

inline std::vector<double> to_unconstrained(const HyperParams& h) {
  std::vector<double> x;
  x.push_back(h.mu_alpha);
  if (h.constraint == Constraint::free) x.push_back(h.mu_beta);
  x.push_back(std::log(h.sd_alpha));
  x.push_back(std::log(h.sd_beta));
  x.push_back(std::atanh(h.rho));
  return x;
}

/// Sum over trials of the bivariate normal log density of (alpha_hat,
/// beta_hat) with mean mu and covariance D + cov_i. Returns -inf when some
/// total covariance is not positive definite.
inline double log_marginal_likelihood(const HyperParams& h, std::span<const TrialSummary> summaries) {
  const Matrix2 d = h.between_cov();
  double ll = 0.0;
  for (const auto& s : summaries) {
    const Matrix2 tot = d + s.cov;
    const double det = tot(0, 0) * tot(1, 1) - tot(0, 1) * tot(1, 0);
    if (!(tot(0, 0) > 0.0) || !(det > 0.0)) return -std::numeric_limits<double>::infinity();
    const double ea = s.alpha_hat - h.mu_alpha;
    const double eb = s.beta_hat - h.mu_beta;
    const double quad = (ea * ea * tot(1, 1) - 2.0 * ea * eb * tot(0, 1) + eb * eb * tot(0, 0)) / det;
    ll += -std::log(2.0 * std::numbers::pi) - 0.5 * std::log(det) - 0.5 * quad;
  }
  return ll;
}

inline double log_normal_density(double x, double mean, double sd) {
  const double z = (x - mean) / sd;
  return -0.5 * z * z - std::log(sd) - 0.5 * std::log(2.0 * std::numbers::pi);
}

/// Prior scale of N(0, 2^2) on means and N+(0, 2^2) on SDs.
inline constexpr double kPriorScale = 2.0;

/// Log prior on the unconstrained scale: N(0,4) means, half-normal SDs,
/// Uniform(-1,1) rho, plus log-Jacobians of the log and atanh transforms.
/// `flat_means` replaces the mean priors by an improper flat prior.
inline double log_prior(const HyperParams& h, bool flat_means = false) {
  double lp = 0.0;
  if (!flat_means) {
    lp += log_normal_density(h.mu_alpha, 0.0, kPriorScale);
    if (h.constraint == Constraint::free) lp += log_normal_density(h.mu_beta, 0.0, kPriorScale);
  }
  for (double sd : {h.sd_alpha, h.sd_beta}) lp += std::log(2.0) + log_normal_density(sd, 0.0, kPriorScale) + std::log(sd);
  lp += std::log(0.5) + std::log1p(-h.rho * h.rho);
  return lp;
}

struct McmcConfig {
  long iterations = 10000;
  long burn_in = 5000;
  long chains = 1;
  long thin = 1;
  std::uint64_t seed = 1;
  double target_accept = 0.3;
  /// Initial proposal SDs on the unconstrained scale (empty: 0.1 each).
  std::vector<double> proposal_scale;
  Constraint constraint = Constraint::free;
  unsigned threads = 1;
  bool flat_mean_prior = false;

  void validate() const {
    if (iterations <= 0 || chains <= 0 || thin <= 0 || burn_in < 0) throw Error("mcmc: counts must be positive");
    if (burn_in >= iterations) throw Error("mcmc: burn_in must be smaller than iterations");
  }
};

struct Draw {
  HyperParams h;
  double log_post = 0.0;
};

struct McmcDiagnostics {
  std::vector<double> acceptance;  // per chain, post burn-in
  std::array<double, 5> ess{};
  std::array<double, 5> rhat{};  // NaN when chains < 2
  bool acceptance_warning = false;
};

struct McmcResult {
  std::vector<std::vector<Draw>> chains;  // post burn-in, thinned
  McmcDiagnostics diagnostics;
};

inline double log_posterior(std::span<const double> x, Constraint c, std::span<const TrialSummary> summaries,
                            bool flat_means = false) {
  const auto h = to_hyper(x, c);
  if (!(std::abs(h.rho) < 1.0) || !(h.sd_alpha > 0.0) || !(h.sd_beta > 0.0)) return -std::numeric_limits<double>::infinity();
  const double ll = log_marginal_likelihood(h, summaries);
  if (!std::isfinite(ll)) return ll;
  return ll + log_prior(h, flat_means);
}

namespace detail {

inline std::vector<double> initial_point(std::span<const TrialSummary> summaries, Constraint c) {
  HyperParams h;
  h.constraint = c;
  if (summaries.size() >= 2) {
    std::vector<double> a, b;
    for (const auto& s : summaries) {
      a.push_back(s.alpha_hat);
      b.push_back(s.beta_hat);
    }
    h.mu_alpha = mean(a);
    h.mu_beta = mean(b);
    h.sd_alpha = std::max(0.05, std::sqrt(sample_variance(a)));
    h.sd_beta = std::max(0.05, std::sqrt(sample_variance(b)));
  }
  return to_unconstrained(h);
}

inline std::vector<Draw> run_chain(std::span<const TrialSummary> summaries, const McmcConfig& cfg, long chain,
                                   double& acceptance) {
  const Constraint c = cfg.constraint;
  const std::size_t d = unconstrained_dim(c);
  Rng rng(cfg.seed, {static_cast<std::uint64_t>(Stream::mcmc), static_cast<std::uint64_t>(chain)});
  std::vector<double> x = initial_point(summaries, c);
  if (chain > 0)
    for (auto& v : x) v += 0.1 * rng.normal();
  double lp = log_posterior(x, c, summaries, cfg.flat_mean_prior);
  if (!std::isfinite(lp)) {
    x = initial_point({}, c);
    lp = log_posterior(x, c, summaries, cfg.flat_mean_prior);
  }
  std::vector<double> base(d, 0.1);
  if (!cfg.proposal_scale.empty()) {
    if (cfg.proposal_scale.size() != d) throw Error("mcmc: proposal_scale has the wrong length");
    base = cfg.proposal_scale;
  }
  // Welford moments of the burn-in draws shape the diagonal proposal
  std::vector<double> run_mean(x), run_m2(d, 0.0);
  double log_lambda = 0.0;
  std::vector<double> prop(d);
  std::vector<Draw> out;
  long accepted = 0, kept_iters = 0;
  for (long it = 0; it < cfg.iterations; ++it) {
    const bool adapting = it < cfg.burn_in;
    for (std::size_t j = 0; j < d; ++j) {
      double sd = base[j];
      if (it >= 200 && cfg.burn_in > 0) {
        const double emp = std::sqrt(run_m2[j] / static_cast<double>(std::min(it, cfg.burn_in)));
        sd = std::max(emp * 2.38 / std::sqrt(static_cast<double>(d)), 1e-4);
      }
      prop[j] = x[j] + std::exp(log_lambda) * sd * rng.normal();
    }
    const double lp_prop = log_posterior(prop, c, summaries, cfg.flat_mean_prior);
    const double log_u = std::log(rng.uniform());
    const bool accept = std::isfinite(lp_prop) && log_u < lp_prop - lp;
    if (accept) {
      x = prop;
      lp = lp_prop;
    }
    if (adapting) {
      const double step = 1.0 / std::pow(static_cast<double>(it) + 1.0, 0.6);
      log_lambda += step * ((accept ? 1.0 : 0.0) - cfg.target_accept);
      const double k = static_cast<double>(it) + 2.0;
      for (std::size_t j = 0; j < d; ++j) {
        const double delta = x[j] - run_mean[j];
        run_mean[j] += delta / k;
        run_m2[j] += delta * (x[j] - run_mean[j]);
      }
    } else {
      ++kept_iters;
      if (accept) ++accepted;
      if ((it - cfg.burn_in) % cfg.thin == 0) out.push_back({to_hyper(x, c), lp});
    }
  }
  acceptance = kept_iters > 0 ? static_cast<double>(accepted) / static_cast<double>(kept_iters) : 0.0;
  return out;
}

/// Autocorrelation of one chain at lags 0..max_lag.
inline std::vector<double> autocorrelation(const std::vector<double>& v, std::size_t max_lag) {
  const std::size_t n = v.size();
  const double m = mean(v);
  double c0 = 0.0;
  for (double x : v) c0 += (x - m) * (x - m);
  std::vector<double> out(max_lag + 1, 0.0);
  if (c0 <= 0.0) return out;
  for (std::size_t lag = 0; lag <= max_lag && lag < n; ++lag) {
    double s = 0.0;
    for (std::size_t i = 0; i + lag < n; ++i) s += (v[i] - m) * (v[i + lag] - m);
    out[lag] = s / c0;
  }
  return out;
}

}  // namespace detail

/// Effective sample size via Geyer's initial monotone sequence on the
/// chain-averaged autocorrelation.
inline double effective_sample_size(const std::vector<std::vector<double>>& chains) {
  if (chains.empty() || chains.front().size() < 4) return 0.0;
  const std::size_t n = chains.front().size();
  const std::size_t max_lag = n - 2;
  std::vector<double> rho(max_lag + 1, 0.0);
  // grow the lag window lazily; most chains decorrelate quickly
  std::size_t window = std::min<std::size_t>(max_lag, 256);
  while (true) {
    std::fill(rho.begin(), rho.end(), 0.0);
    for (const auto& ch : chains) {
      auto ac = detail::autocorrelation(ch, window);
      for (std::size_t l = 0; l <= window; ++l) rho[l] += ac[l] / static_cast<double>(chains.size());
    }
    double tau = -1.0;
    double prev = std::numeric_limits<double>::infinity();
    bool truncated = false;
    for (std::size_t k = 0; 2 * k + 1 <= window; ++k) {
      double pair = rho[2 * k] + rho[2 * k + 1];
      if (pair <= 0.0) {
        truncated = true;
        break;
      }
      pair = std::min(pair, prev);
      prev = pair;
      tau += 2.0 * pair;
    }
    if (truncated || window >= max_lag) {
      const double total = static_cast<double>(n * chains.size());
      return total / std::max(tau, 1.0 / std::log10(std::max(total, 10.0)));
    }
    window = std::min(max_lag, window * 4);
  }
}

/// Split R-hat (Gelman et al. 2013). Needs at least 2 chains of >= 4 draws.
inline double split_rhat(const std::vector<std::vector<double>>& chains) {
  std::vector<std::vector<double>> halves;
  for (const auto& ch : chains) {
    const std::size_t h = ch.size() / 2;
    halves.emplace_back(ch.begin(), ch.begin() + static_cast<long>(h));
    halves.emplace_back(ch.end() - static_cast<long>(h), ch.end());
  }
  const double n = static_cast<double>(halves.front().size());
  std::vector<double> means, vars;
  for (const auto& h : halves) {
    means.push_back(mean(h));
    vars.push_back(sample_variance(h));
  }
  const double w = mean(vars);
  const double b = n * sample_variance(means);
  const double var_plus = (n - 1.0) / n * w + b / n;
  return w > 0 ? std::sqrt(var_plus / w) : std::numeric_limits<double>::quiet_NaN();
}

/// Adaptive random-walk Metropolis on the unconstrained scale. Proposal
/// scales adapt during burn-in only and are frozen afterwards.
inline McmcResult metropolis_sample(std::span<const TrialSummary> summaries, const McmcConfig& cfg) {
  cfg.validate();
  McmcResult res;
  res.chains.resize(static_cast<std::size_t>(cfg.chains));
  res.diagnostics.acceptance.assign(static_cast<std::size_t>(cfg.chains), 0.0);
  parallel_for(static_cast<std::size_t>(cfg.chains), cfg.threads, [&](std::size_t c) {
    res.chains[c] = detail::run_chain(summaries, cfg, static_cast<long>(c), res.diagnostics.acceptance[c]);
  });
  for (double a : res.diagnostics.acceptance)
    if (a < 0.05 || a > 0.8) res.diagnostics.acceptance_warning = true;
  for (std::size_t p = 0; p < 5; ++p) {
    std::vector<std::vector<double>> per;
    for (const auto& ch : res.chains) {
      std::vector<double> v;
      for (const auto& d : ch) v.push_back(d.h.values()[p]);
      per.push_back(std::move(v));
    }
    res.diagnostics.ess[p] = effective_sample_size(per);
    res.diagnostics.rhat[p] = cfg.chains >= 2 && per.front().size() >= 4 ? split_rhat(per)
                                                                         : std::numeric_limits<double>::quiet_NaN();
  }
  return res;
}

struct ParamSummary {
  double median = 0.0;
  Interval interval;
};

/// Posterior medians and equal-tailed credible intervals, pooled over chains.
inline std::array<ParamSummary, 5> posterior_summary(const McmcResult& res, double level) {
  if (!(level > 0.0 && level < 1.0)) throw Error("level must lie in (0, 1)");
  std::array<ParamSummary, 5> out{};
  for (std::size_t p = 0; p < 5; ++p) {
    std::vector<double> v;
    for (const auto& ch : res.chains)
      for (const auto& d : ch) v.push_back(d.h.values()[p]);
    if (v.empty()) throw Error("posterior_summary: no draws");
    std::sort(v.begin(), v.end());
    out[p].median = quantile_sorted(v, 0.5);
    out[p].interval = {quantile_sorted(v, 0.5 * (1.0 - level)), quantile_sorted(v, 0.5 * (1.0 + level))};
  }
  return out;
}

}  // namespace surrometa
