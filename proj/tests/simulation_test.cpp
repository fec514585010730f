#include "support.hpp"
#include "surrometa/io.hpp"
#include "surrometa/simulation.hpp"

#include <catch_amalgamated.hpp>

#include <sstream>

using namespace surrometa;
using namespace surrometa::testing;
using Catch::Approx;

namespace {

struct Moments {
  double mean = 0.0, var = 0.0;
  std::size_t n = 0;
  double se_mean() const { return std::sqrt(var / static_cast<double>(n)); }
};

Moments moments(const std::vector<double>& v) { return {surrometa::mean(v), sample_variance(v), v.size()}; }

// SE of a sample variance for normal data.
double se_var_normal(double sigma2, std::size_t n) { return sigma2 * std::sqrt(2.0 / (static_cast<double>(n) - 1.0)); }

std::vector<double> draws(int n, std::uint64_t key, auto&& fn) {
  Rng rng(1234, {static_cast<std::uint64_t>(Stream::fixture), key});
  std::vector<double> v(static_cast<std::size_t>(n));
  for (auto& x : v) x = fn(rng);
  return v;
}

}  // namespace

TEST_CASE("violation scales", "[simulation]") {
  CHECK(violation_sd(Scenario::poc, ViolationLevel::moderate) == 0.1);
  CHECK(violation_sd(Scenario::poc, ViolationLevel::slight) == 0.05);
  CHECK(violation_sd(Scenario::vaccine, ViolationLevel::moderate) == 0.30);
  CHECK(violation_sd(Scenario::vaccine, ViolationLevel::slight) == 0.15);
  CHECK(violation_sd(Scenario::poc, ViolationLevel::none) == 0.0);
  CHECK(default_trial_size(Scenario::poc) == 2000);
  CHECK(default_trial_size(Scenario::vaccine) == 5000);
  CHECK(default_estimand_trials(Scenario::poc) == 20000);
  CHECK(default_estimand_size(Scenario::poc) == 200);
  CHECK(default_estimand_size(Scenario::vaccine) == 3000);
}

TEST_CASE("proof-of-concept parameter laws", "[simulation]") {
  for (auto v : {ViolationLevel::slight, ViolationLevel::moderate}) {
    const double sd = violation_sd(Scenario::poc, v);
    std::vector<double> p, bsz, byz, bys2;
    Rng rng(5, {static_cast<std::uint64_t>(Stream::fixture), static_cast<std::uint64_t>(v)});
    for (int i = 0; i < 100000; ++i) {
      const auto t = draw_poc_params(v, rng);
      p.push_back(t.p);
      bsz.push_back(t.beta_SZ);
      byz.push_back(t.beta_YZ);
      bys2.push_back(t.beta_YS2);
    }
    const auto mb = moments(bsz);
    CHECK(std::abs(mb.mean - 0.5) < 4.0 * mb.se_mean());
    CHECK(std::abs(mb.var - 0.09) < 5.0 * se_var_normal(0.09, mb.n));
    for (const auto& b : {byz, bys2}) {
      const auto m = moments(b);
      CHECK(std::abs(m.mean) < 4.0 * m.se_mean());
      CHECK(std::abs(m.var - sd * sd) < 5.0 * se_var_normal(sd * sd, m.n));
    }
    CHECK(*std::min_element(p.begin(), p.end()) >= 0.30);
    CHECK(*std::max_element(p.begin(), p.end()) < 0.70);
    const auto mp = moments(p);
    CHECK(std::abs(mp.mean - 0.5) < 5.0 * std::sqrt(0.4 * 0.4 / 12.0 / 1e5));
  }
}

TEST_CASE("vaccine parameter laws", "[simulation]") {
  for (auto v : {ViolationLevel::slight, ViolationLevel::moderate}) {
    const double sd = violation_sd(Scenario::vaccine, v);
    std::vector<double> p, mu1, bsz, bys;
    Rng rng(6, {static_cast<std::uint64_t>(Stream::fixture), static_cast<std::uint64_t>(v)});
    for (int i = 0; i < 100000; ++i) {
      const auto t = draw_vaccine_params(v, rng);
      p.push_back(t.p);
      mu1.push_back(t.mu1);
      bsz.push_back(t.beta_SZ);
      bys.push_back(t.beta_YS);
    }
    CHECK(*std::min_element(p.begin(), p.end()) > 0.25);
    CHECK(*std::max_element(p.begin(), p.end()) < 0.75);
    CHECK(*std::min_element(mu1.begin(), mu1.end()) >= -1.0);
    const auto mb = moments(bsz);
    CHECK(std::abs(mb.mean - 1.0) < 4.0 * mb.se_mean());
    CHECK(std::abs(mb.var - 0.25) < 5.0 * se_var_normal(0.25, mb.n));
    const auto ms = moments(bys);
    CHECK(std::abs(ms.var - sd * sd) < 5.0 * se_var_normal(sd * sd, ms.n));
  }
}

TEST_CASE("proof-of-concept marginals", "[simulation][property]") {
  PocTrialParams t;
  t.p = 0.4;
  t.beta_SZ = 0.7;
  Rng rng(8, {static_cast<std::uint64_t>(Stream::fixture)});
  const auto d = gen_poc_trial(t, 100000, rng, "big", true);
  std::vector<double> x1, x2, s1, s0;
  for (const auto& r : d.records) {
    x1.push_back(r.covariates[0]);
    x2.push_back(r.covariates[1]);
    (r.treatment ? s1 : s0).push_back(*r.surrogate);
  }
  CHECK(d.records.front().treatment == 1);
  CHECK(d.records.back().treatment == 0);
  CHECK(s1.size() == 50000);
  const auto m1 = moments(x1);
  CHECK(std::abs(m1.mean - 0.4) < 5.0 * std::sqrt(0.24 / 1e5));
  const auto m2 = moments(x2);
  CHECK(std::abs(m2.mean) < 5.0 * m2.se_mean());
  CHECK(std::abs(m2.var - 1.0) < 5.0 * se_var_normal(1.0, m2.n));
  const auto ms1 = moments(s1), ms0 = moments(s0);
  CHECK(std::abs(ms1.mean - 0.7) < 5.0 * ms1.se_mean());
  CHECK(std::abs(ms0.mean) < 5.0 * ms0.se_mean());
  CHECK(std::abs(ms0.var - 1.0) < 5.0 * se_var_normal(1.0, ms0.n));
}

TEST_CASE("vaccine marginals", "[simulation][property]") {
  VaccineTrialParams t;
  t.mu1 = 0.3;
  t.mu2 = -0.6;
  t.p = 0.35;
  t.beta_SZ = 1.2;
  Rng rng(9, {static_cast<std::uint64_t>(Stream::fixture)});
  const auto d = gen_vaccine_trial(t, 100000, rng);
  std::vector<double> x1, x2, x3, s1, y;
  for (const auto& r : d.records) {
    x1.push_back(r.covariates[0]);
    x2.push_back(r.covariates[1]);
    x3.push_back(r.covariates[2]);
    if (r.treatment) s1.push_back(*r.surrogate);
    y.push_back(*r.outcome);
    CHECK((*r.outcome == 0.0 || *r.outcome == 1.0));
  }
  const auto a = moments(x1), b = moments(x2), c = moments(x3), s = moments(s1);
  CHECK(std::abs(a.mean - 0.3) < 5.0 * a.se_mean());
  CHECK(std::abs(a.var - 1.0) < 5.0 * se_var_normal(1.0, a.n));
  CHECK(std::abs(b.mean + 0.6) < 5.0 * b.se_mean());
  CHECK(std::abs(c.mean - 0.35) < 5.0 * std::sqrt(0.35 * 0.65 / 1e5));
  CHECK(std::abs(s.mean - 1.2) < 5.0 * s.se_mean());
  CHECK(std::abs(s.var - 1.0) < 5.0 * se_var_normal(1.0, s.n));
}

TEST_CASE("null surrogate effect gives equal arm means", "[simulation]") {
  PocTrialParams t;
  t.beta_SZ = 0.0;
  Rng rng(10, {static_cast<std::uint64_t>(Stream::fixture)});
  const auto d = gen_poc_trial(t, 20000, rng);
  std::vector<double> s1, s0;
  for (const auto& r : d.records) (r.treatment ? s1 : s0).push_back(*r.surrogate);
  const double se = std::sqrt(sample_variance(s1) / s1.size() + sample_variance(s0) / s0.size());
  CHECK(std::abs(mean(s1) - mean(s0)) < 4.0 * se);
}

TEST_CASE("slope of Y on S is -0.25 when X1 = 1", "[simulation]") {
  PocTrialParams t;
  t.p = 0.5;
  t.beta_SZ = 0.5;
  Rng rng(11, {static_cast<std::uint64_t>(Stream::fixture)});
  const auto d = gen_poc_trial(t, 200000, rng);
  std::vector<double> s, y;
  for (const auto& r : d.records)
    if (r.covariates[0] == 1.0) {
      s.push_back(*r.surrogate);
      y.push_back(*r.outcome);
    }
  const double ms = mean(s), my = mean(y);
  double sxy = 0.0, sxx = 0.0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    sxy += (s[i] - ms) * (y[i] - my);
    sxx += (s[i] - ms) * (s[i] - ms);
  }
  const double slope = sxy / sxx;
  const double se = 1.0 / std::sqrt(sxx);
  CHECK(std::abs(slope + 0.25) < 4.0 * se);
}

TEST_CASE("vaccine risk stays below its analytic bound", "[simulation]") {
  VaccineTrialParams t;
  t.beta_YS = 3.0;
  const double bound = 0.10 * std::exp(2.0);
  CHECK(bound == Approx(0.7389).margin(1e-4));
  for (double s : {-10.0, 0.0, 10.0})
    for (double x2 : {-std::numbers::pi / 2, std::numbers::pi / 2})
      CHECK(vaccine_risk(t, 1, s, 50.0, x2, 1.0) <= bound);
}

TEST_CASE("odd trial sizes are rejected", "[simulation]") {
  Rng rng(1);
  CHECK_THROWS_AS(gen_poc_trial(PocTrialParams{}, 7, rng), Error);
  CHECK_THROWS_AS(gen_vaccine_trial(VaccineTrialParams{}, 9, rng), Error);
}

TEST_CASE("the true index identifies the clinical effect", "[simulation]") {
  // Without violations E(Y | X, S) is trial invariant and the log relative
  // risk of its arm means equals that of Y.
  const long M = 600, m = 3000;
  std::vector<TrialSummary> s;
  for (long j = 0; j < M; ++j) {
    const auto uj = static_cast<std::uint64_t>(j);
    Rng prng(77, {static_cast<std::uint64_t>(Stream::trial_params), uj});
    Rng drng(77, {static_cast<std::uint64_t>(Stream::trial_data), uj});
    const auto params = draw_vaccine_params(ViolationLevel::none, prng);
    auto d = gen_vaccine_trial(params, m, drng);
    for (auto& r : d.records)
      r.surrogate = vaccine_risk(params, r.treatment, *r.surrogate, r.covariates[0], r.covariates[1], r.covariates[2]);
    EffectSpec a, b;
    a.contrast = b.contrast = Contrast::log_relative_risk;
    a.target = Target::surrogate_raw;
    a.unbiased_variance = b.unbiased_variance = true;
    s.push_back(joint_effects(d, static_cast<const IndexPredictor*>(nullptr), a, b));
  }
  PluginOptions o;
  o.pd_projection = PdProjection::off;
  const auto est = plugin_estimate(s, o);
  REQUIRE(est.rho);
  CHECK(*est.rho > 0.95);
  CHECK(std::abs(est.mu_alpha - est.mu_beta) < 4.0 * std::sqrt(est.vcov(0, 0) + est.vcov(1, 1) - 2 * est.vcov(0, 1)));
}

TEST_CASE("a constant index makes the estimand undefined", "[simulation]") {
  Learner l;
  l.features.terms = {Term::intercept()};
  l.coefficients = Eigen::VectorXd::Constant(1, 0.3);
  const auto g = single_learner_model(l);
  const auto res = approximate_data_adaptive_estimand(&g, Scenario::poc, ViolationLevel::moderate, 200, 50, 3, 0);
  CHECK_FALSE(res.rho);
}

TEST_CASE("closed-form raw estimand", "[simulation]") {
  CHECK(poc_raw_rho(0.1) == Approx(0.6293).margin(1e-4));
  CHECK(poc_raw_rho(0.0) == Approx(0.8007).margin(1e-4));
  const auto mc = approximate_data_adaptive_estimand(nullptr, Scenario::poc, ViolationLevel::moderate, 20000, 200, 9, 0, 4);
  REQUIRE(mc.rho);
  CHECK(*mc.rho == Approx(poc_raw_rho(0.1)).margin(0.03));
}

TEST_CASE("estimand approximation is stable", "[simulation][property]") {
  Rng rng(3);
  const auto trials = gen_replication(Scenario::poc, ViolationLevel::slight, 24, 2000, 5, 0);
  const auto g = fit_scenario_index(Scenario::poc, trials, {});
  const auto a = approximate_data_adaptive_estimand(&g, Scenario::poc, ViolationLevel::slight, 20000, 200, 1, 0, 4);
  const auto b = approximate_data_adaptive_estimand(&g, Scenario::poc, ViolationLevel::slight, 20000, 200, 2, 0, 4);
  REQUIRE(a.rho);
  REQUIRE(b.rho);
  CHECK(std::abs(*a.rho - *b.rho) < 0.01);
}

TEST_CASE("coverage flag follows the interval", "[simulation]") {
  CHECK(*covers(Interval{0.2, 0.6}, 0.4));
  CHECK_FALSE(*covers(Interval{0.2, 0.6}, 0.7));
  CHECK(*covers(Interval{0.2, 0.6}, 0.6));
  CHECK_FALSE(covers(std::nullopt, 0.5));
  CHECK_FALSE(covers(Interval{0, 1}, std::nullopt));
}

TEST_CASE("study tables are byte-identical across runs and thread counts", "[simulation][property]") {
  ScenarioConfig c;
  c.n_trials = 4;
  c.trial_size = 200;
  c.replications = 4;
  c.estimand_trials = 200;
  c.estimand_size = 50;
  c.boot = 40;
  c.seed = 17;
  c.bayes = true;
  c.mcmc.iterations = 600;
  c.mcmc.burn_in = 300;
  auto render = [](const ScenarioConfig& cfg) {
    const auto rows = run_study(cfg);
    std::stringstream ss;
    io::write_study(ss, rows);
    io::write_study_summary(ss, summarize_study(rows));
    return ss.str();
  };
  const auto a = render(c);
  c.threads = 3;
  const auto b = render(c);
  CHECK(a == b);
  c.seed = 18;
  CHECK(render(c) != a);

  const auto rows = run_study(c);
  CHECK(rows.size() == 8);
  const auto summary = summarize_study(rows);
  REQUIRE(summary.size() == 2);
  CHECK(summary[0].replications == 4);
}

TEST_CASE("vaccine study replication runs end to end", "[simulation]") {
  ScenarioConfig c;
  c.scenario = Scenario::vaccine;
  c.n_trials = 4;
  c.trial_size = 600;
  c.replications = 1;
  c.estimand_trials = 200;
  c.estimand_size = 300;
  c.boot = 30;
  const auto rows = run_study(c);
  REQUIRE(rows.size() == 2);
  for (const auto& r : rows) {
    INFO(r.error);
    CHECK(r.error.empty());
    CHECK(r.estimand);
  }
}

TEST_CASE("regime replication produces a z statistic", "[simulation]") {
  RegimeConfig c;
  c.n_grid = {200};
  c.N_grid = {20};
  c.replications = 3;
  const auto rows = run_regime_experiment(c);
  REQUIRE(rows.size() == 3);
  for (const auto& r : rows) {
    INFO(r.error);
    CHECK(r.z);
  }
  const auto cells = summarize_regime(rows);
  REQUIRE(cells.size() == 1);
  CHECK(cells[0].replications == 3);
  c.n_grid = {201};
  CHECK_THROWS_AS(run_regime_experiment(c), Error);
}
