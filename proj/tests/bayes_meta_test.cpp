#include "support.hpp"
#include "surrometa/bayes_meta.hpp"

#include <catch_amalgamated.hpp>

#include <numbers>

using namespace surrometa;
using namespace surrometa::testing;
using Catch::Approx;

namespace {

HyperParams hyper(double ma, double mb, double sa, double sb, double r) {
  HyperParams h;
  h.mu_alpha = ma;
  h.mu_beta = mb;
  h.sd_alpha = sa;
  h.sd_beta = sb;
  h.rho = r;
  return h;
}

double ks_normal(std::vector<double> v, double mean, double sd) {
  std::sort(v.begin(), v.end());
  const double n = static_cast<double>(v.size());
  double d = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    const double f = normal_cdf((v[i] - mean) / sd);
    d = std::max({d, std::abs(f - i / n), std::abs(f - (i + 1) / n)});
  }
  return d;
}

std::vector<double> pooled(const McmcResult& r, std::size_t p) {
  std::vector<double> v;
  for (const auto& ch : r.chains)
    for (const auto& d : ch) v.push_back(d.h.values()[p]);
  return v;
}

}  // namespace

TEST_CASE("marginal likelihood examples", "[bayes]") {
  const auto h = hyper(0.3, -0.2, 0.0, 0.0, 0.0);
  const std::vector<TrialSummary> one = {summary(0.3, -0.2, 1.0, 1.0)};
  CHECK(log_marginal_likelihood(h, one) == Approx(-std::log(2.0 * std::numbers::pi)).epsilon(1e-14));
  CHECK(log_marginal_likelihood(h, one) == Approx(-1.8379).margin(1e-4));
  const std::vector<TrialSummary> two(2, one.front());
  CHECK(log_marginal_likelihood(h, two) == 2.0 * log_marginal_likelihood(h, one));
}

TEST_CASE("marginal likelihood matches an explicit inverse", "[bayes]") {
  auto s = three_trials();
  s[1].cov(0, 1) = s[1].cov(1, 0) = 0.03;
  const auto h = hyper(1.8, 2.1, 0.9, 1.1, 0.4);
  double oracle = 0.0;
  for (const auto& t : s) {
    const double a = h.sd_alpha * h.sd_alpha + t.cov(0, 0);
    const double d = h.sd_beta * h.sd_beta + t.cov(1, 1);
    const double b = h.rho * h.sd_alpha * h.sd_beta + t.cov(0, 1);
    const double det = a * d - b * b;
    const double i00 = d / det, i11 = a / det, i01 = -b / det;
    const double x = t.alpha_hat - h.mu_alpha, y = t.beta_hat - h.mu_beta;
    const double q = x * x * i00 + 2.0 * x * y * i01 + y * y * i11;
    oracle += -std::log(2.0 * std::numbers::pi) - 0.5 * std::log(det) - 0.5 * q;
  }
  CHECK(std::abs(log_marginal_likelihood(h, s) - oracle) < 1e-12);
}

TEST_CASE("non positive-definite total covariance gives minus infinity", "[bayes]") {
  const std::vector<TrialSummary> s = {summary(0, 0, 0.0, 0.0)};
  const auto h = hyper(0, 0, 1.0, 1.0, 1.0);
  CHECK(log_marginal_likelihood(h, s) == -std::numeric_limits<double>::infinity());
}

TEST_CASE("marginal likelihood is invariant to trial order", "[bayes][property]") {
  auto s = random_summaries(9, 4);
  const auto h = hyper(0.9, 0.4, 0.8, 0.7, 0.3);
  const double base = log_marginal_likelihood(h, s);
  std::reverse(s.begin(), s.end());
  CHECK(log_marginal_likelihood(h, s) == Approx(base).epsilon(1e-14));
  std::rotate(s.begin(), s.begin() + 4, s.end());
  CHECK(log_marginal_likelihood(h, s) == Approx(base).epsilon(1e-14));
}

TEST_CASE("prior terms", "[bayes]") {
  const auto h = hyper(0.0, 0.0, 1.5, 0.5, 0.3);
  auto sd_term = [](double sd) {
    return std::log(2.0) - 0.5 * (sd / 2.0) * (sd / 2.0) - std::log(2.0 * std::sqrt(2.0 * std::numbers::pi)) +
           std::log(sd);
  };
  const double means = 2.0 * std::log(1.0 / (2.0 * std::sqrt(2.0 * std::numbers::pi)));
  const double rho = std::log(0.5) + std::log(1.0 - 0.09);
  CHECK(log_prior(h) == Approx(means + sd_term(1.5) + sd_term(0.5) + rho).epsilon(1e-14));

  auto p = h;
  p.constraint = Constraint::proportional;
  p.mu_alpha = 0.7;
  auto f = p;
  f.constraint = Constraint::free;
  CHECK(log_prior(f) - log_prior(p) == Approx(log_normal_density(p.mu_beta, 0.0, 2.0)).epsilon(1e-14));
}

TEST_CASE("proportional transform", "[bayes]") {
  const std::vector<double> x = {0.8, std::log(1.2), std::log(0.6), std::atanh(0.4)};
  const auto h = to_hyper(x, Constraint::proportional);
  CHECK(h.mu_beta == Approx(0.4 * 0.6 / 1.2 * 0.8).epsilon(1e-14));
  const auto back = to_unconstrained(h);
  REQUIRE(back.size() == 4);
  for (std::size_t i = 0; i < 4; ++i) CHECK(back[i] == Approx(x[i]).epsilon(1e-14));
}

TEST_CASE("prior recovery without data", "[bayes]") {
  McmcConfig cfg;
  cfg.iterations = 55000;
  cfg.burn_in = 5000;
  cfg.thin = 10;
  cfg.seed = 11;
  const auto res = metropolis_sample({}, cfg);
  const auto mu = pooled(res, 0);
  REQUIRE(mu.size() == 5000);
  CHECK(ks_normal(mu, 0.0, 2.0) < 0.05);
  CHECK_FALSE(res.diagnostics.acceptance_warning);
}

TEST_CASE("sampler is deterministic given the seed", "[bayes][property]") {
  const auto s = random_summaries(6, 8);
  McmcConfig cfg;
  cfg.iterations = 3000;
  cfg.burn_in = 1000;
  cfg.chains = 2;
  cfg.seed = 5;
  const auto a = metropolis_sample(s, cfg);
  cfg.threads = 2;
  const auto b = metropolis_sample(s, cfg);
  REQUIRE(a.chains.size() == 2);
  for (std::size_t c = 0; c < 2; ++c) {
    REQUIRE(a.chains[c].size() == b.chains[c].size());
    for (std::size_t i = 0; i < a.chains[c].size(); ++i) CHECK(a.chains[c][i].h.values() == b.chains[c][i].h.values());
  }
  CHECK(std::isfinite(a.diagnostics.rhat[0]));
}

TEST_CASE("proportional constraint holds in every draw", "[bayes][property]") {
  const auto s = random_summaries(6, 9);
  McmcConfig cfg;
  cfg.iterations = 4000;
  cfg.burn_in = 1000;
  cfg.constraint = Constraint::proportional;
  const auto res = metropolis_sample(s, cfg);
  for (const auto& d : res.chains[0])
    CHECK(d.h.mu_beta == d.h.rho * d.h.sd_beta / d.h.sd_alpha * d.h.mu_alpha);
}

TEST_CASE("flat-prior one-trial chain centres on the estimate", "[bayes][property]") {
  const std::vector<TrialSummary> one = {summary(1.3, -0.4, 0.04, 0.04, 0.01)};
  McmcConfig cfg;
  cfg.iterations = 60000;
  cfg.burn_in = 10000;
  cfg.flat_mean_prior = true;
  cfg.seed = 3;
  const auto res = metropolis_sample(one, cfg);
  const auto mu = pooled(res, 0);
  const double se = std::sqrt(sample_variance(mu) / res.diagnostics.ess[0]);
  CHECK(std::abs(mean(mu) - 1.3) < 4.0 * se);
}

TEST_CASE("credible intervals are calibrated on simulated hierarchies", "[bayes]") {
  const auto truth = hyper(0.5, -0.3, 0.6, 0.4, 0.5);
  const auto th = truth.values();
  std::array<int, 5> covered{};
  const int reps = 100;
  for (int r = 0; r < reps; ++r) {
    Rng rng(2024, {static_cast<std::uint64_t>(Stream::hierarchical), static_cast<std::uint64_t>(r)});
    std::vector<TrialSummary> s;
    for (int i = 0; i < 50; ++i) {
      const double u = rng.normal(), v = rng.normal();
      const double a = truth.mu_alpha + truth.sd_alpha * u;
      const double b = truth.mu_beta + truth.sd_beta * (truth.rho * u + std::sqrt(1 - truth.rho * truth.rho) * v);
      const double va = 0.02, vb = 0.03;
      s.push_back(summary(a + std::sqrt(va) * rng.normal(), b + std::sqrt(vb) * rng.normal(), va, vb));
    }
    McmcConfig cfg;
    cfg.iterations = 8000;
    cfg.burn_in = 3000;
    cfg.seed = static_cast<std::uint64_t>(r) + 1;
    const auto ps = posterior_summary(metropolis_sample(s, cfg), 0.95);
    for (std::size_t p = 0; p < 5; ++p)
      covered[p] += ps[p].interval.lower <= th[p] && th[p] <= ps[p].interval.upper;
  }
  for (std::size_t p = 0; p < 5; ++p) {
    INFO(kHyperNames[p] << " covered " << covered[p]);
    CHECK(covered[p] >= 85);
  }
}

TEST_CASE("posterior summary quantile rule", "[bayes]") {
  McmcResult res;
  res.chains.emplace_back();
  for (int i = 1; i <= 99; ++i) res.chains[0].push_back({hyper(i, 0, 1, 1, 0), 0.0});
  const auto ps = posterior_summary(res, 0.95);
  CHECK(ps[0].median == 50.0);
  // type 7: 1 + 98 p
  CHECK(ps[0].interval.lower == Approx(3.45).epsilon(1e-14));
  CHECK(ps[0].interval.upper == Approx(96.55).epsilon(1e-14));
  CHECK_THROWS_AS(posterior_summary(res, 1.0), Error);
  CHECK_THROWS_AS(posterior_summary(McmcResult{}, 0.95), Error);
}

TEST_CASE("symmetric draws have median equal to mean", "[bayes]") {
  McmcResult res;
  res.chains.emplace_back();
  for (double v : {-3.0, -1.0, 0.5, 2.0, 3.5, 5.0, 7.0}) res.chains[0].push_back({hyper(v, 0, 1, 1, 0), 0.0});
  const auto ps = posterior_summary(res, 0.9);
  CHECK(ps[0].median == Approx(mean(pooled(res, 0))));
}

TEST_CASE("effective sample size and split R-hat", "[bayes]") {
  Rng rng(1, {static_cast<std::uint64_t>(Stream::fixture)});
  std::vector<double> iid(4000), ar(4000);
  double x = 0.0;
  for (std::size_t i = 0; i < iid.size(); ++i) {
    iid[i] = rng.normal();
    x = 0.9 * x + std::sqrt(1 - 0.81) * rng.normal();
    ar[i] = x;
  }
  CHECK(effective_sample_size({iid}) == Approx(4000).epsilon(0.15));
  CHECK(effective_sample_size({ar}) == Approx(4000.0 * 0.1 / 1.9).epsilon(0.3));

  std::vector<double> a(2000), b(2000);
  for (std::size_t i = 0; i < a.size(); ++i) {
    a[i] = rng.normal();
    b[i] = rng.normal();
  }
  CHECK(split_rhat({a, b}) == Approx(1.0).margin(0.01));
  for (auto& v : b) v += 1.0;
  CHECK(split_rhat({a, b}) > 1.1);
}

TEST_CASE("mcmc config validation", "[bayes]") {
  McmcConfig cfg;
  cfg.burn_in = cfg.iterations;
  CHECK_THROWS_AS(metropolis_sample({}, cfg), Error);
}
