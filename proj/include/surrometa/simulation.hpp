// Simulation study: the proof-of-concept and vaccine data-generating
// mechanisms, Monte Carlo approximation of the data-adaptive estimand, the
// replication harness and the n/N regime experiment.

#pragma once

#include "surrometa/bayes_meta.hpp"
#include "surrometa/core.hpp"
#include "surrometa/meta_plugin.hpp"
#include "surrometa/parallel.hpp"
#include "surrometa/resampling.hpp"
#include "surrometa/rng.hpp"
#include "surrometa/stats.hpp"
#include "surrometa/surrogate_index.hpp"
#include "surrometa/within_trial.hpp"

#include <cmath>
#include <cstdint>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

namespace surrometa {

enum class Scenario { poc, vaccine };
enum class ViolationLevel { none, slight, moderate };
enum class SurrogateDef { raw, index };

inline const char* to_string(Scenario s) { return s == Scenario::poc ? "poc" : "vaccine"; }
inline const char* to_string(ViolationLevel v) {
  switch (v) {
    case ViolationLevel::none: return "none";
    case ViolationLevel::slight: return "slight";
    case ViolationLevel::moderate: return "moderate";
  }
  return "?";
}
inline const char* to_string(SurrogateDef d) { return d == SurrogateDef::raw ? "raw" : "index"; }

/// SD of the trial-level violation parameters.
inline double violation_sd(Scenario s, ViolationLevel v) {
  if (v == ViolationLevel::none) return 0.0;
  if (s == Scenario::poc) return v == ViolationLevel::slight ? 0.05 : 0.1;
  return v == ViolationLevel::slight ? 0.15 : 0.30;
}

inline long default_trial_size(Scenario s) { return s == Scenario::poc ? 2000 : 5000; }
inline long default_estimand_trials(Scenario s) { return s == Scenario::poc ? 20000 : 5000; }
inline long default_estimand_size(Scenario s) { return s == Scenario::poc ? 200 : 3000; }

// ---------------------------------------------------------------------------
// Proof-of-concept mechanism

struct PocTrialParams {
  double p = 0.5;
  double beta_SZ = 0.5;
  double beta_YZ = 0.0;
  double beta_YS2 = 0.0;
};

inline PocTrialParams draw_poc_params(ViolationLevel v, Rng& rng) {
  const double sd = violation_sd(Scenario::poc, v);
  PocTrialParams t;
  t.p = rng.uniform(0.30, 0.70);
  t.beta_SZ = rng.normal(0.5, 0.3);
  t.beta_YZ = sd * rng.normal();
  t.beta_YS2 = sd * rng.normal();
  return t;
}

namespace detail {
inline void check_even(long n) {
  if (n <= 0 || n % 2 != 0) throw Error("trial size must be a positive even number");
}
inline void prepare_trial(TrialDataset& out, std::string id, std::vector<std::string> covnames, long n) {
  out.trial_id = std::move(id);
  out.covariate_names = std::move(covnames);
  out.records.resize(static_cast<std::size_t>(n));
}
}  // namespace detail

/// Fills `out` in place (buffers are reused). The first n/2 records are
/// treated. With `noise_x2` an independent N(0,1) covariate x2 is appended.
inline void gen_poc_trial_into(TrialDataset& out, const PocTrialParams& t, long n, Rng& rng, std::string trial_id,
                               bool noise_x2 = false) {
  detail::check_even(n);
  if (!(t.p > 0.0 && t.p < 1.0)) throw Error("poc: p must lie in (0, 1)");
  detail::prepare_trial(out, std::move(trial_id), noise_x2 ? std::vector<std::string>{"x1", "x2"}
                                                           : std::vector<std::string>{"x1"},
                        n);
  for (long i = 0; i < n; ++i) {
    auto& r = out.records[static_cast<std::size_t>(i)];
    const int z = i < n / 2 ? 1 : 0;
    const double x1 = rng.bernoulli(t.p) ? 1.0 : 0.0;
    const double s = t.beta_SZ * z + rng.normal();
    const double y = -0.25 * s * x1 + s * (1.0 - x1) + t.beta_YZ * z + t.beta_YS2 * s * s + rng.normal();
    r.covariates.resize(noise_x2 ? 2 : 1);
    r.covariates[0] = x1;
    if (noise_x2) r.covariates[1] = rng.normal();
    r.treatment = z;
    r.surrogate = s;
    r.outcome = y;
    r.weight = 1.0;
  }
}

inline TrialDataset gen_poc_trial(const PocTrialParams& t, long n, Rng& rng, std::string trial_id = "trial",
                                  bool noise_x2 = false) {
  TrialDataset d;
  gen_poc_trial_into(d, t, n, rng, std::move(trial_id), noise_x2);
  return d;
}

/// Index features: S, X1, S*X1 and S^2 with an intercept.
inline FeatureSpec poc_index_spec() {
  FeatureSpec f;
  f.terms = {Term::intercept(), Term::raw(kSurrogateField), Term::raw("x1"), Term::interaction(kSurrogateField, "x1"),
             Term::square(kSurrogateField)};
  return f;
}

/// E(Y | X1, S) without violations: S (1 - 1.25 X1).
inline SurrogateIndexModel poc_true_index() {
  Learner l;
  l.features = poc_index_spec();
  l.family = Family::linear;
  l.coefficients = Eigen::VectorXd::Zero(5);
  l.coefficients[1] = 1.0;
  l.coefficients[3] = -1.25;
  return single_learner_model(std::move(l));
}

/// Trial-level correlation between the mean-difference effects on S and Y
/// under the poc mechanism, in closed form.
inline double poc_raw_rho(double violation_sd) {
  const double eb = 0.5, vb = 0.09;
  const double eq = 1.0 - 1.25 * 0.5;
  const double vq = 1.25 * 1.25 * 0.4 * 0.4 / 12.0;
  const double eb2 = eb * eb + vb;
  const double eb4 = eb * eb * eb * eb + 6.0 * eb * eb * vb + 3.0 * vb * vb;
  const double cov = vb * eq;
  const double s2 = violation_sd * violation_sd;
  const double var_beta = eb2 * (eq * eq + vq) - eb * eb * eq * eq + s2 + s2 * eb4;
  return cov / std::sqrt(vb * var_beta);
}

// ---------------------------------------------------------------------------
// Vaccine mechanism

struct VaccineTrialParams {
  double mu1 = 0.0;
  double mu2 = 0.0;
  double p = 0.5;
  double beta_SZ = 1.0;
  double beta_YZ = 0.0;
  double beta_YS = 0.0;
};

inline VaccineTrialParams draw_vaccine_params(ViolationLevel v, Rng& rng) {
  const double sd = violation_sd(Scenario::vaccine, v);
  VaccineTrialParams t;
  t.mu1 = rng.uniform(-1.0, 1.0);
  t.mu2 = rng.uniform(-1.0, 1.0);
  t.p = rng.uniform(0.25, 0.75);
  t.beta_SZ = rng.normal(1.0, 0.5);
  t.beta_YZ = sd * rng.normal();
  t.beta_YS = sd * rng.normal();
  return t;
}

inline double vaccine_risk(const VaccineTrialParams& t, int z, double s, double x1, double x2, double x3) {
  const double lin = t.beta_YZ * z + (1.0 + t.beta_YS + x3) * s + x1 - 2.0 * x3;
  return expit(lin) * 0.10 * std::exp(std::sin(x2) + 1.0);
}

inline void gen_vaccine_trial_into(TrialDataset& out, const VaccineTrialParams& t, long n, Rng& rng,
                                   std::string trial_id) {
  detail::check_even(n);
  if (!(t.p > 0.0 && t.p < 1.0)) throw Error("vaccine: p must lie in (0, 1)");
  detail::prepare_trial(out, std::move(trial_id), {"x1", "x2", "x3"}, n);
  for (long i = 0; i < n; ++i) {
    auto& r = out.records[static_cast<std::size_t>(i)];
    const int z = i < n / 2 ? 1 : 0;
    const double x1 = rng.normal(t.mu1, 1.0);
    const double x2 = rng.normal(t.mu2, 1.0);
    const double x3 = rng.bernoulli(t.p) ? 1.0 : 0.0;
    const double s = t.beta_SZ * z + rng.normal();
    const double prob = vaccine_risk(t, z, s, x1, x2, x3);
    if (!(prob >= 0.0 && prob <= 1.0)) throw Error("vaccine: risk outside [0, 1]");
    r.covariates.assign({x1, x2, x3});
    r.treatment = z;
    r.surrogate = s;
    r.outcome = rng.uniform() < prob ? 1.0 : 0.0;
    r.weight = 1.0;
  }
}

inline TrialDataset gen_vaccine_trial(const VaccineTrialParams& t, long n, Rng& rng, std::string trial_id = "trial") {
  TrialDataset d;
  gen_vaccine_trial_into(d, t, n, rng, std::move(trial_id));
  return d;
}

/// Candidate learners for the vaccine index: logistic regressions with
/// main effects, an S x X3 interaction and spline terms.
inline StackingConfig default_vaccine_stacking() {
  StackingConfig c;
  const std::string s = kSurrogateField;
  LearnerSpec main{{}, Family::logistic, "glm_main"};
  main.features.terms = {Term::intercept(), Term::raw(s), Term::raw("x1"), Term::raw("x2"), Term::raw("x3")};
  LearnerSpec inter = main;
  inter.name = "glm_interaction";
  inter.features.terms.push_back(Term::interaction(s, "x3"));
  LearnerSpec spline = inter;
  spline.name = "glm_spline";
  spline.features.terms = {Term::intercept(),       Term::bspline(s, 5, 3, false), Term::raw("x1"),
                           Term::bspline("x2", 5, 3, false), Term::raw("x3"), Term::interaction(s, "x3")};
  c.learners = {main, inter, spline};
  c.loss = StackLoss::binomial_loglik;
  return c;
}

// ---------------------------------------------------------------------------
// Trial generation and effect specifications shared by the harnesses

inline void gen_trial_into(TrialDataset& out, Scenario s, ViolationLevel v, long n, std::uint64_t seed,
                           std::initializer_list<std::uint64_t> keys_params,
                           std::initializer_list<std::uint64_t> keys_data, std::string id, bool noise_x2 = false) {
  Rng prng(seed, keys_params);
  Rng drng(seed, keys_data);
  if (s == Scenario::poc) {
    gen_poc_trial_into(out, draw_poc_params(v, prng), n, drng, std::move(id), noise_x2);
  } else {
    gen_vaccine_trial_into(out, draw_vaccine_params(v, prng), n, drng, std::move(id));
  }
}

/// N trials for one replication; streams keyed by (replication, trial).
inline MetaDataset gen_replication(Scenario s, ViolationLevel v, long n_trials, long n, std::uint64_t seed,
                                   std::uint64_t replication) {
  MetaDataset out(static_cast<std::size_t>(n_trials));
  for (long j = 0; j < n_trials; ++j) {
    const auto uj = static_cast<std::uint64_t>(j);
    gen_trial_into(out[static_cast<std::size_t>(j)], s, v, n, seed,
                   {static_cast<std::uint64_t>(Stream::trial_params), replication, uj},
                   {static_cast<std::uint64_t>(Stream::trial_data), replication, uj}, "t" + std::to_string(j + 1));
  }
  return out;
}

struct EffectPair {
  EffectSpec alpha;
  EffectSpec beta;
};

/// Within-trial estimators used on study data: ANCOVA on X1 (HC0) for poc;
/// sample means with log relative risks for vaccine.
inline EffectPair study_effects(Scenario s, SurrogateDef def) {
  EffectPair e;
  e.alpha.target = def == SurrogateDef::raw ? Target::surrogate_raw : Target::surrogate_index;
  e.beta.target = Target::clinical;
  if (s == Scenario::poc) {
    e.alpha.adjust_covariates = {"x1"};
    e.beta.adjust_covariates = {"x1"};
  } else {
    e.alpha.contrast = def == SurrogateDef::raw ? Contrast::mean_difference : Contrast::log_relative_risk;
    e.beta.contrast = Contrast::log_relative_risk;
  }
  return e;
}

/// Unadjusted sample-mean contrasts with unbiased covariance, used for the
/// Monte Carlo estimand.
inline EffectPair estimand_effects(Scenario s, SurrogateDef def) {
  EffectPair e = study_effects(s, def);
  e.alpha.adjust_covariates.clear();
  e.beta.adjust_covariates.clear();
  e.alpha.unbiased_variance = true;
  e.beta.unbiased_variance = true;
  return e;
}

inline SurrogateIndexModel fit_scenario_index(Scenario s, const MetaDataset& trials, const StackingConfig& stacking) {
  if (s == Scenario::poc) return fit_index(poc_index_spec(), Family::linear, trials);
  return fit_stacked(stacking, trials).model;
}

// ---------------------------------------------------------------------------
// Data-adaptive estimand

struct EstimandResult {
  std::optional<double> rho;
  ThetaEstimate theta;
  long failed_trials = 0;
};

/// rho^g approximated by the measurement-error-corrected plug-in over M
/// fresh trials of size m. `g == nullptr` evaluates the raw surrogate.
inline EstimandResult approximate_data_adaptive_estimand(const SurrogateIndexModel* g, Scenario s, ViolationLevel v,
                                                         long M, long m, std::uint64_t seed, std::uint64_t key,
                                                         unsigned threads = 1) {
  if (M < 100) throw Error("estimand: need at least 100 Monte Carlo trials");
  detail::check_even(m);
  const auto def = g ? SurrogateDef::index : SurrogateDef::raw;
  const auto eff = estimand_effects(s, def);
  std::vector<std::optional<TrialSummary>> out(static_cast<std::size_t>(M));
  const std::size_t blocks = std::min<std::size_t>(64, static_cast<std::size_t>(M));
  parallel_for(blocks, threads, [&](std::size_t b) {
    TrialDataset buf;
    std::optional<IndexPredictor> pred;
    const auto e = static_cast<std::uint64_t>(Stream::estimand);
    for (std::size_t j = b; j < out.size(); j += blocks) {
      gen_trial_into(buf, s, v, m, seed, {e, key, j, 1}, {e, key, j, 2}, "mc");
      if (g && !pred) pred.emplace(*g, buf.covariate_names);
      try {
        out[j] = joint_effects(buf, pred ? &*pred : nullptr, eff.alpha, eff.beta);
      } catch (const Error&) {
      }
    }
  });
  std::vector<TrialSummary> summaries;
  EstimandResult res;
  for (auto& o : out) {
    if (o) summaries.push_back(std::move(*o));
    else ++res.failed_trials;
  }
  PluginOptions opts;
  opts.pd_projection = PdProjection::off;
  try {
    res.theta = plugin_estimate(std::span<const TrialSummary>(summaries), opts, std::span<const double>{});
    res.rho = res.theta.rho;
  } catch (const Error&) {
  }
  return res;
}

// ---------------------------------------------------------------------------
// Study harness

struct ScenarioConfig {
  Scenario scenario = Scenario::poc;
  ViolationLevel violation = ViolationLevel::moderate;
  long n_trials = 6;
  long trial_size = 0;  // 0: scenario default
  long replications = 500;
  std::uint64_t seed = 1;
  long estimand_trials = 0;  // 0: scenario default
  long estimand_size = 0;    // 0: scenario default
  long boot = 1000;          // 0 disables BCa
  double level = 0.95;
  bool bayes = false;
  McmcConfig mcmc;
  PluginOptions plugin;
  StackingConfig stacking = default_vaccine_stacking();
  unsigned threads = 1;

  ScenarioConfig resolved() const {
    ScenarioConfig c = *this;
    if (c.trial_size == 0) c.trial_size = default_trial_size(scenario);
    if (c.estimand_trials == 0) c.estimand_trials = default_estimand_trials(scenario);
    if (c.estimand_size == 0) c.estimand_size = default_estimand_size(scenario);
    c.plugin.level = level;
    return c;
  }

  void validate() const {
    if (n_trials < 3 || replications < 1 || trial_size < 0 || estimand_trials < 0 || estimand_size < 0 || boot < 0)
      throw Error("scenario config: counts must be positive (n_trials >= 3)");
    if (!(level > 0.0 && level < 1.0)) throw Error("level must lie in (0, 1)");
  }
};

struct StudyRow {
  long replication = 0;
  SurrogateDef def = SurrogateDef::raw;
  long n_trials = 0;
  std::optional<double> estimand;
  std::optional<double> rho;        // PD projection on demand
  std::optional<double> rho_no_pd;  // no projection
  bool pd_adjusted = false;
  std::optional<double> se;
  std::optional<Interval> wald;
  std::optional<Interval> bca;
  std::optional<double> bayes_median;
  std::optional<Interval> bayes;
  std::string error;
};

inline std::optional<bool> covers(const std::optional<Interval>& ci, const std::optional<double>& truth) {
  if (!ci || !truth) return std::nullopt;
  return ci->contains(*truth);
}

namespace detail {

inline void analyze_summaries(StudyRow& row, const std::vector<TrialSummary>& summaries, const ScenarioConfig& c,
                              std::uint64_t stream_seed) {
  const std::span<const TrialSummary> sp(summaries);
  auto opts = c.plugin;
  const auto est = plugin_estimate(sp, opts, std::span<const double>{});
  row.rho = est.rho;
  row.pd_adjusted = est.pd_adjusted;
  auto off = opts;
  off.pd_projection = PdProjection::off;
  row.rho_no_pd = plugin_estimate(sp, off, std::span<const double>{}).rho;
  if (const auto v = rho_variance(est)) row.se = std::sqrt(std::max(0.0, *v));
  if (est.rho && row.se) row.wald = rho_ci_fisher_z(est, static_cast<long>(summaries.size()), opts);
  if (c.boot > 0 && est.rho) {
    const auto boot = bayesian_bootstrap_meta(sp, opts, c.boot, derive_seed(stream_seed, {1}), BootStatistic::rho);
    if (!boot.rho.empty()) row.bca = bca_rho(boot, *est.rho, jackknife_rho(sp, opts), c.level).interval;
  }
  if (c.bayes) {
    auto mc = c.mcmc;
    mc.seed = derive_seed(stream_seed, {2});
    mc.threads = 1;
    const auto post = posterior_summary(metropolis_sample(sp, mc), c.level);
    row.bayes_median = post[4].median;
    row.bayes = post[4].interval;
  }
}

}  // namespace detail

/// One replication: generates N trials, analyses the raw surrogate and the
/// estimated index, and approximates both estimands.
inline std::vector<StudyRow> run_replication(const ScenarioConfig& c, long rep, std::optional<double> raw_estimand) {
  const auto urep = static_cast<std::uint64_t>(rep);
  const auto trials = gen_replication(c.scenario, c.violation, c.n_trials, c.trial_size, c.seed, urep);
  std::vector<StudyRow> rows;
  std::optional<SurrogateIndexModel> model;
  std::string model_error;
  try {
    model = fit_scenario_index(c.scenario, trials, c.stacking);
  } catch (const Error& e) {
    model_error = e.what();
  }
  for (auto def : {SurrogateDef::raw, SurrogateDef::index}) {
    StudyRow row;
    row.replication = rep;
    row.def = def;
    row.n_trials = c.n_trials;
    try {
      if (def == SurrogateDef::index && !model) throw Error("index fit failed: " + model_error);
      const auto eff = study_effects(c.scenario, def);
      const auto batch = summarize_trials(trials, def == SurrogateDef::index ? &*model : nullptr, eff.alpha, eff.beta);
      if (!batch.failures.empty())
        throw Error("trial " + batch.failures.front().first + ": " + batch.failures.front().second);
      if (def == SurrogateDef::raw) {
        row.estimand = raw_estimand;
      } else {
        row.estimand = approximate_data_adaptive_estimand(&*model, c.scenario, c.violation, c.estimand_trials,
                                                          c.estimand_size, c.seed, urep)
                           .rho;
      }
      detail::analyze_summaries(row, batch.summaries, c,
                                derive_seed(c.seed, {static_cast<std::uint64_t>(Stream::hierarchical), urep,
                                                     static_cast<std::uint64_t>(def)}));
    } catch (const Error& e) {
      row.error = e.what();
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

/// Estimand for the untransformed surrogate: closed form for poc, Monte
/// Carlo for vaccine (not data-adaptive, so computed once).
inline std::optional<double> raw_surrogate_estimand(const ScenarioConfig& c) {
  if (c.scenario == Scenario::poc) return poc_raw_rho(violation_sd(c.scenario, c.violation));
  return approximate_data_adaptive_estimand(nullptr, c.scenario, c.violation, c.estimand_trials, c.estimand_size,
                                            c.seed, ~std::uint64_t{0}, c.threads)
      .rho;
}

inline std::vector<StudyRow> run_study(const ScenarioConfig& cfg) {
  const auto c = cfg.resolved();
  c.validate();
  const auto raw_estimand = raw_surrogate_estimand(c);
  std::vector<std::vector<StudyRow>> per(static_cast<std::size_t>(c.replications));
  parallel_for(per.size(), c.threads,
               [&](std::size_t r) { per[r] = run_replication(c, static_cast<long>(r), raw_estimand); });
  std::vector<StudyRow> rows;
  for (auto& p : per)
    for (auto& r : p) rows.push_back(std::move(r));
  return rows;
}

struct StudySummary {
  SurrogateDef def = SurrogateDef::raw;
  long replications = 0;
  long failures = 0;
  double median_estimand = std::numeric_limits<double>::quiet_NaN();
  double median_rho = std::numeric_limits<double>::quiet_NaN();
  double median_bias = std::numeric_limits<double>::quiet_NaN();
  double mse = std::numeric_limits<double>::quiet_NaN();
  double median_bias_no_pd = std::numeric_limits<double>::quiet_NaN();
  double mse_no_pd = std::numeric_limits<double>::quiet_NaN();
  double pd_adjusted_rate = std::numeric_limits<double>::quiet_NaN();
  double coverage_wald = std::numeric_limits<double>::quiet_NaN();
  double coverage_bca = std::numeric_limits<double>::quiet_NaN();
  double coverage_bayes = std::numeric_limits<double>::quiet_NaN();
};

inline std::vector<StudySummary> summarize_study(const std::vector<StudyRow>& rows) {
  std::vector<StudySummary> out;
  for (auto def : {SurrogateDef::raw, SurrogateDef::index}) {
    StudySummary s;
    s.def = def;
    std::vector<double> est, rho, bias, sq, bias_np, sq_np;
    double pd = 0.0;
    std::array<std::pair<double, double>, 3> cov{};  // (covered, defined)
    for (const auto& r : rows) {
      if (r.def != def) continue;
      ++s.replications;
      if (!r.error.empty() || !r.rho || !r.estimand) {
        ++s.failures;
        continue;
      }
      est.push_back(*r.estimand);
      rho.push_back(*r.rho);
      bias.push_back(*r.rho - *r.estimand);
      sq.push_back(bias.back() * bias.back());
      if (r.rho_no_pd) {
        bias_np.push_back(*r.rho_no_pd - *r.estimand);
        sq_np.push_back(bias_np.back() * bias_np.back());
      }
      pd += r.pd_adjusted ? 1.0 : 0.0;
      const std::optional<Interval>* cis[3] = {&r.wald, &r.bca, &r.bayes};
      for (int k = 0; k < 3; ++k) {
        if (auto hit = covers(*cis[k], r.estimand)) {
          cov[static_cast<std::size_t>(k)].first += *hit ? 1.0 : 0.0;
          cov[static_cast<std::size_t>(k)].second += 1.0;
        }
      }
    }
    if (!rho.empty()) {
      s.median_estimand = median(est);
      s.median_rho = median(rho);
      s.median_bias = median(bias);
      s.mse = mean(sq);
      s.pd_adjusted_rate = pd / static_cast<double>(rho.size());
    }
    if (!bias_np.empty()) {
      s.median_bias_no_pd = median(bias_np);
      s.mse_no_pd = mean(sq_np);
    }
    auto rate = [](const std::pair<double, double>& p) {
      return p.second > 0 ? p.first / p.second : std::numeric_limits<double>::quiet_NaN();
    };
    s.coverage_wald = rate(cov[0]);
    s.coverage_bca = rate(cov[1]);
    s.coverage_bayes = rate(cov[2]);
    out.push_back(s);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Regime experiment

struct RegimeConfig {
  std::vector<long> n_grid = {100, 500, 1000, 2000, 5000};
  std::vector<long> N_grid = {100, 500, 1000, 2000, 5000};
  long replications = 100;
  std::uint64_t seed = 1;
  ViolationLevel violation = ViolationLevel::moderate;
  int spline_df = 8;
  PluginOptions plugin;
  unsigned threads = 1;

  void validate() const {
    if (n_grid.empty() || N_grid.empty()) throw Error("regime: grid must be nonempty");
    if (replications < 1) throw Error("regime: replications must be positive");
    for (long n : n_grid) detail::check_even(n);
    for (long N : N_grid)
      if (N < 3) throw Error("regime: N must be at least 3");
  }
};

struct RegimeRow {
  long n = 0;
  long N = 0;
  long replication = 0;
  std::optional<double> rho;
  std::optional<double> se;
  std::optional<double> z;
  std::optional<bool> covered;
  std::string error;
};

/// Raw-surrogate ANCOVA adjusted for X1 and a cubic B-spline in an
/// independent noise covariate X2, with HC0 covariances.
inline EffectPair regime_effects(int spline_df) {
  EffectPair e = study_effects(Scenario::poc, SurrogateDef::raw);
  for (auto* spec : {&e.alpha, &e.beta}) spec->extra_terms.terms.push_back(Term::bspline("x2", spline_df, 3, false));
  return e;
}

inline RegimeRow run_regime_replication(const RegimeConfig& c, long n, long N, long rep, double truth) {
  RegimeRow row{n, N, rep, {}, {}, {}, {}, {}};
  const auto eff = regime_effects(c.spline_df);
  std::vector<TrialSummary> summaries;
  summaries.reserve(static_cast<std::size_t>(N));
  TrialDataset buf;
  const auto un = static_cast<std::uint64_t>(n), uN = static_cast<std::uint64_t>(N),
             ur = static_cast<std::uint64_t>(rep);
  try {
    for (long j = 0; j < N; ++j) {
      const auto uj = static_cast<std::uint64_t>(j);
      gen_trial_into(buf, Scenario::poc, c.violation, n, c.seed,
                     {static_cast<std::uint64_t>(Stream::trial_params), un, uN, ur, uj},
                     {static_cast<std::uint64_t>(Stream::trial_data), un, uN, ur, uj}, "t" + std::to_string(j + 1),
                     true);
      summaries.push_back(joint_effects(buf, static_cast<const IndexPredictor*>(nullptr), eff.alpha, eff.beta));
    }
    const auto est = plugin_estimate(std::span<const TrialSummary>(summaries), c.plugin, std::span<const double>{});
    row.rho = est.rho;
    if (const auto v = rho_variance(est)) row.se = std::sqrt(std::max(0.0, *v));
    if (row.rho && row.se && *row.se > 0.0) {
      row.z = (*row.rho - truth) / *row.se;
      row.covered = rho_ci_fisher_z(est, N, c.plugin).contains(truth);
    }
  } catch (const Error& e) {
    row.error = e.what();
  }
  return row;
}

inline std::vector<RegimeRow> run_regime_experiment(const RegimeConfig& c) {
  c.validate();
  const double truth = poc_raw_rho(violation_sd(Scenario::poc, c.violation));
  struct Task {
    long n, N, rep;
  };
  std::vector<Task> tasks;
  for (long n : c.n_grid)
    for (long N : c.N_grid)
      for (long r = 0; r < c.replications; ++r) tasks.push_back({n, N, r});
  std::vector<RegimeRow> rows(tasks.size());
  parallel_for(tasks.size(), c.threads, [&](std::size_t i) {
    rows[i] = run_regime_replication(c, tasks[i].n, tasks[i].N, tasks[i].rep, truth);
  });
  return rows;
}

struct RegimeCell {
  long n = 0;
  long N = 0;
  long replications = 0;
  long failures = 0;
  double z_mean = std::numeric_limits<double>::quiet_NaN();
  double z_var = std::numeric_limits<double>::quiet_NaN();
  double coverage = std::numeric_limits<double>::quiet_NaN();
};

inline std::vector<RegimeCell> summarize_regime(const std::vector<RegimeRow>& rows) {
  std::vector<RegimeCell> cells;
  for (const auto& r : rows) {
    auto it = std::find_if(cells.begin(), cells.end(), [&](const RegimeCell& c) { return c.n == r.n && c.N == r.N; });
    if (it == cells.end()) {
      cells.push_back({r.n, r.N});
      it = cells.end() - 1;
    }
    ++it->replications;
  }
  for (auto& cell : cells) {
    std::vector<double> z;
    double hit = 0.0, defined = 0.0;
    for (const auto& r : rows) {
      if (r.n != cell.n || r.N != cell.N) continue;
      if (!r.z) {
        ++cell.failures;
        continue;
      }
      z.push_back(*r.z);
      if (r.covered) {
        hit += *r.covered ? 1.0 : 0.0;
        defined += 1.0;
      }
    }
    if (!z.empty()) cell.z_mean = mean(z);
    if (z.size() >= 2) cell.z_var = sample_variance(z);
    if (defined > 0) cell.coverage = hit / defined;
  }
  return cells;
}

}  // namespace surrometa
