// Acceptance checks. Prints one PASS/FAIL line per criterion and exits
// nonzero if any fails. Pass --full for the 500-replication coverage run.

#include "support.hpp"
#include "surrometa/bayes_meta.hpp"
#include "surrometa/meta_plugin.hpp"
#include "surrometa/resampling.hpp"
#include "surrometa/simulation.hpp"
#include "surrometa/strain_adjust.hpp"

#include <sys/wait.h>

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <functional>
#include <iostream>
#include <sstream>
#include <string>
#include <thread>

using namespace surrometa;
using namespace surrometa::testing;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

unsigned threads() { return std::max(default_threads(), std::thread::hardware_concurrency()); }

struct Outcome {
  bool pass = false;
  std::string detail;
};

int failures = 0;

void criterion(int k, const std::string& name, const std::function<Outcome()>& fn) {
  const auto t0 = Clock::now();
  Outcome o;
  try {
    o = fn();
  } catch (const std::exception& e) {
    o = {false, std::string("exception: ") + e.what()};
  }
  std::printf("%s %2d %s: %s [%.1fs]\n", o.pass ? "PASS" : "FAIL", k, name.c_str(), o.detail.c_str(),
              seconds_since(t0));
  std::fflush(stdout);
  failures += o.pass ? 0 : 1;
}

std::string fmt(const char* f, auto... xs) {
  char buf[256];
  std::snprintf(buf, sizeof buf, f, xs...);
  return buf;
}

Outcome exact_oracle() {
  const auto s = three_trials();
  ThetaEstimate est;
  std::vector<double> times;
  for (int i = 0; i < 200; ++i) {
    const auto t0 = Clock::now();
    est = plugin_estimate(s);
    times.push_back(seconds_since(t0));
  }
  const double t = median(times);
  const double err = std::max({std::abs(est.mu_alpha - 2.0), std::abs(est.mu_beta - 2.0), std::abs(est.d_alpha - 0.9),
                               std::abs(est.d_beta - 0.9), std::abs(est.d_alpha_beta - 0.5),
                               est.rho ? std::abs(*est.rho - 5.0 / 9.0) : 1.0});
  return {err < 1e-12 && t < 1e-3, fmt("max error %.2e, median runtime %.1f us", err, t * 1e6)};
}

Outcome zero_error_reduction() {
  int exact = 0;
  for (std::uint64_t f = 0; f < 100; ++f) {
    auto s = random_summaries(5 + f % 20, 1000 + f);
    for (auto& t : s) t.cov.setZero();
    const auto est = plugin_estimate(s);
    const double n = static_cast<double>(s.size());
    double ma = 0.0, mb = 0.0;
    for (const auto& t : s) {
      ma += t.alpha_hat;
      mb += t.beta_hat;
    }
    ma /= n;
    mb /= n;
    double saa = 0.0, sbb = 0.0, sab = 0.0;
    for (const auto& t : s) {
      saa += (t.alpha_hat - ma) * (t.alpha_hat - ma);
      sbb += (t.beta_hat - mb) * (t.beta_hat - mb);
      sab += (t.alpha_hat - ma) * (t.beta_hat - mb);
    }
    const Matrix2 b = est.between_cov();
    exact += b(0, 0) == saa / (n - 1) && b(1, 1) == sbb / (n - 1) && b(0, 1) == sab / (n - 1);
  }
  return {exact == 100, fmt("%d/100 fixtures bit-identical", exact)};
}

Outcome sandwich_validity() {
  const auto s = random_summaries(200, 11, 0.6, 0.05);
  const auto point = plugin_estimate(s);
  BootstrapOptions bo;
  bo.threads = threads();
  const auto t0 = Clock::now();
  const auto res = bayesian_bootstrap_meta(s, PluginOptions{}, 2000, 7, BootStatistic::rho, bo);
  const double t = seconds_since(t0);
  const double sd = std::sqrt(sample_variance(res.rho));
  const double se = std::sqrt(*rho_variance(point));
  const double rel = std::abs(sd / se - 1.0);
  return {rel < 0.15 && t < 10.0, fmt("sandwich SE %.4f, bootstrap SD %.4f, rel diff %.3f, %.2fs", se, sd, rel, t)};
}

Outcome perfect_surrogacy() {
  const auto g0 = poc_true_index();
  const auto res =
      approximate_data_adaptive_estimand(&g0, Scenario::poc, ViolationLevel::none, 20000, 200, 4, 0, threads());
  if (!res.rho) return {false, "rho undefined"};
  return {*res.rho >= 0.99, fmt("rho(g0) = %.4f (M = 20000, m = 200)", *res.rho)};
}

std::vector<StudySummary> poc_study;
long poc_study_reps = 0;

Outcome index_vs_raw(long reps) {
  ScenarioConfig c;
  c.scenario = Scenario::poc;
  c.violation = ViolationLevel::slight;
  c.n_trials = 24;
  c.replications = reps;
  c.boot = 0;
  c.seed = 2025;
  c.threads = threads();
  poc_study = summarize_study(run_study(c));
  poc_study_reps = reps;
  const auto& raw = poc_study[0];
  const auto& idx = poc_study[1];
  return {idx.median_rho > raw.median_rho && raw.failures + idx.failures < reps / 10,
          fmt("median rho index %.4f vs raw %.4f (%ld reps, failures %ld/%ld)", idx.median_rho, raw.median_rho, reps,
              raw.failures, idx.failures)};
}

Outcome wald_coverage(bool full) {
  const double lo = full ? 0.91 : 0.88, hi = full ? 0.98 : 0.99;
  const auto& idx = poc_study.at(1);
  const double cov = idx.coverage_wald;
  return {cov >= lo && cov <= hi, fmt("index Wald coverage %.3f over %ld reps, band [%.2f, %.2f]", cov,
                                      poc_study_reps - idx.failures, lo, hi)};
}

Outcome bayes_calibration() {
  const int reps = 200, N = 6;
  std::vector<int> hit(static_cast<std::size_t>(reps), 0);
  parallel_for(static_cast<std::size_t>(reps), threads(), [&](std::size_t r) {
    Rng rng(31, {static_cast<std::uint64_t>(Stream::hierarchical), r});
    // hyperparameters drawn from the prior, then held fixed as the truth
    HyperParams h;
    h.mu_alpha = 2.0 * rng.normal();
    h.mu_beta = 2.0 * rng.normal();
    h.sd_alpha = std::abs(2.0 * rng.normal());
    h.sd_beta = std::abs(2.0 * rng.normal());
    h.rho = rng.uniform(-1.0, 1.0);
    std::vector<TrialSummary> s;
    for (int i = 0; i < N; ++i) {
      const double u = rng.normal(), v = rng.normal();
      const double a = h.mu_alpha + h.sd_alpha * u;
      const double b = h.mu_beta + h.sd_beta * (h.rho * u + std::sqrt(1.0 - h.rho * h.rho) * v);
      const double va = 0.05, vb = 0.05, r0 = 0.3;
      const double e1 = rng.normal(), e2 = rng.normal();
      s.push_back(summary(a + std::sqrt(va) * e1, b + std::sqrt(vb) * (r0 * e1 + std::sqrt(1 - r0 * r0) * e2), va, vb,
                          r0 * std::sqrt(va * vb)));
    }
    McmcConfig cfg;
    cfg.iterations = 20000;
    cfg.burn_in = 5000;
    cfg.chains = 2;
    cfg.thin = 5;
    cfg.seed = 500 + r;
    const auto ps = posterior_summary(metropolis_sample(s, cfg), 0.95);
    hit[r] = ps[4].interval.contains(h.rho);
  });
  const double cov = static_cast<double>(std::accumulate(hit.begin(), hit.end(), 0)) / reps;
  return {cov >= 0.88 && cov <= 0.99, fmt("rho CrI coverage %.3f over %d reps (N = %d)", cov, reps, N)};
}

Outcome regime() {
  RegimeConfig c;
  c.n_grid = {2000};
  c.N_grid = {100};
  c.replications = 100;
  c.seed = 77;
  c.threads = threads();
  const auto good = summarize_regime(run_regime_experiment(c)).at(0);
  c.n_grid = {100};
  c.N_grid = {5000};
  const auto bad = summarize_regime(run_regime_experiment(c)).at(0);
  const bool ok_good = std::abs(good.z_mean) < 0.3 && good.z_var >= 0.7 && good.z_var <= 1.4;
  const bool ok_bad = bad.z_var > 1.3 || bad.coverage < 0.90;
  return {ok_good && ok_bad,
          fmt("(n=2000,N=100) z mean %.3f var %.3f cov %.2f; (n=100,N=5000) z mean %.3f var %.3f cov %.2f",
              good.z_mean, good.z_var, good.coverage, bad.z_mean, bad.z_var, bad.coverage)};
}

Outcome strain() {
  const auto table = published_gmt_table();
  StrainMix m;
  m.weights = {{"Epsilon", 0.5}, {"Gamma", 0.5}};
  const double v = adjust_titer(100.0, adjustment_factor(m, table, "Moderna"));
  const double oracle = 100.0 * (0.5 / 2.1 + 0.5 / 3.2);
  const double err = std::max(std::abs(v - oracle), std::abs(v - 39.434523809523810));
  return {err < 1e-12, fmt("adjusted titer %.15f, error %.1e", v, err)};
}

Outcome property_suites() {
  const std::string cmd = "\"" SURROMETA_TESTS_BIN "\" \"[property]\" > /dev/null 2>&1";
  const auto t0 = Clock::now();
  const int rc = std::system(cmd.c_str());
  const double t = seconds_since(t0);
  const bool ok = WIFEXITED(rc) && WEXITSTATUS(rc) == 0;
  return {ok && t < 300.0, fmt("property-tagged unit tests %s in %.1fs", ok ? "passed" : "failed", t)};
}

}  // namespace

int main(int argc, char** argv) {
  bool full = false;
  for (int i = 1; i < argc; ++i) full = full || std::strcmp(argv[i], "--full") == 0;
  const long reps = full ? 500 : 150;

  criterion(1, "exact oracle", exact_oracle);
  criterion(2, "zero-error reduction", zero_error_reduction);
  criterion(3, "sandwich validity", sandwich_validity);
  criterion(4, "perfect-surrogacy estimand", perfect_surrogacy);
  criterion(5, "index-vs-raw ordering", [&] { return index_vs_raw(reps); });
  criterion(6, full ? "Wald coverage" : "Wald coverage (reduced)", [&] { return wald_coverage(full); });
  criterion(7, "Bayesian calibration", bayes_calibration);
  criterion(8, "regime experiment", regime);
  criterion(9, "strain adjustment", strain);
  criterion(10, "property suites", property_suites);
  std::printf("%d criteria failed\n", failures);
  return failures == 0 ? 0 : 1;
}
