// surrometa command-line interface.

#include "surrometa/bayes_meta.hpp"
#include "surrometa/io.hpp"
#include "surrometa/meta_plugin.hpp"
#include "surrometa/prediction.hpp"
#include "surrometa/resampling.hpp"
#include "surrometa/simulation.hpp"
#include "surrometa/strain_adjust.hpp"
#include "surrometa/surrogate_index.hpp"
#include "surrometa/within_trial.hpp"

#include <CLI11.hpp>

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <set>
#include <sstream>
#include <string>

namespace fs = std::filesystem;
using namespace surrometa;

namespace {

struct Globals {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<long> boot;
  std::optional<double> level;
  std::optional<unsigned> threads;
  std::string out = ".";
};

std::ifstream open_in(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw Error("cannot open '" + path + "'");
  return f;
}

class Run {
 public:
  Run(const Globals& g, std::string name) : g_(g), name_(std::move(name)), cfg_(io::Config::from_file(g.config)) {
    fs::create_directories(g.out);
  }

  io::Config& cfg() { return cfg_; }

  std::uint64_t seed() { return g_.seed ? *g_.seed : cfg_.get<std::uint64_t>("seed", 20240101); }
  double level() { return g_.level ? *g_.level : cfg_.get<double>("level", 0.95); }
  long boot(long fallback) { return g_.boot ? *g_.boot : cfg_.get<long>("boot", fallback); }
  unsigned threads() { return g_.threads ? *g_.threads : cfg_.get<unsigned>("threads", default_threads()); }

  std::ofstream out(const std::string& file) {
    const auto p = fs::path(g_.out) / file;
    std::ofstream f(p);
    if (!f) throw Error("cannot write '" + p.string() + "'");
    written_.push_back(p.string());
    return f;
  }

  /// Validates keys and writes the effective-config echo.
  void finish_config() {
    cfg_.reject_unknown();
    auto f = out(name_ + "_config.ini");
    f << "# effective configuration for '" << name_ << "'\n" << cfg_.effective();
  }

  void report() const {
    for (const auto& w : written_) std::cerr << "wrote " << w << "\n";
  }

 private:
  const Globals& g_;
  std::string name_;
  io::Config cfg_;
  std::vector<std::string> written_;
};

PluginOptions plugin_options(io::Config& c, double level) {
  PluginOptions o;
  o.bessel_correction = c.get<bool>("meta.bessel_correction", o.bessel_correction);
  o.sandwich_small_sample = c.get<bool>("meta.sandwich_small_sample", o.sandwich_small_sample);
  o.use_t_quantiles = c.get<bool>("meta.t_quantiles", o.use_t_quantiles);
  o.t_quantile_max_trials = c.get<long>("meta.t_quantile_max_trials", o.t_quantile_max_trials);
  const auto pd = c.get<std::string>("meta.pd_projection", "on_demand");
  if (pd == "on_demand") o.pd_projection = PdProjection::on_demand;
  else if (pd == "off") o.pd_projection = PdProjection::off;
  else throw Error("meta.pd_projection must be on_demand or off");
  o.fisher_z_threshold = c.get<double>("meta.fisher_z_threshold", o.fisher_z_threshold);
  o.min_trials = c.get<long>("meta.min_trials", o.min_trials);
  o.level = level;
  o.validate();
  return o;
}

McmcConfig mcmc_config(io::Config& c, std::uint64_t seed, unsigned threads, const McmcConfig& defaults = {}) {
  McmcConfig m = defaults;
  m.iterations = c.get<long>("mcmc.iterations", m.iterations);
  m.burn_in = c.get<long>("mcmc.burn_in", m.burn_in);
  m.chains = c.get<long>("mcmc.chains", m.chains);
  m.thin = c.get<long>("mcmc.thin", m.thin);
  m.target_accept = c.get<double>("mcmc.target_accept", m.target_accept);
  const auto con = c.get<std::string>("mcmc.constraint", "free");
  if (con == "free") m.constraint = Constraint::free;
  else if (con == "proportional") m.constraint = Constraint::proportional;
  else throw Error("mcmc.constraint must be free or proportional");
  m.seed = seed;
  m.threads = threads;
  m.validate();
  return m;
}

Contrast parse_contrast(const std::string& s) {
  if (s == "mean_difference") return Contrast::mean_difference;
  if (s == "log_relative_risk") return Contrast::log_relative_risk;
  throw Error("contrast must be mean_difference or log_relative_risk");
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const auto a = item.find_first_not_of(" \t");
    if (a == std::string::npos) continue;
    out.push_back(item.substr(a, item.find_last_not_of(" \t") - a + 1));
  }
  return out;
}

EffectSpec effect_spec(io::Config& c, const std::string& which, Target target) {
  EffectSpec e;
  e.target = target;
  e.contrast = parse_contrast(c.get<std::string>("effects." + which + "_contrast", "mean_difference"));
  e.adjust_covariates = split_list(c.get<std::string>("effects.adjust", ""));
  const auto extra = c.get<std::string>("effects.extra_terms", "");
  if (!extra.empty()) e.extra_terms = io::parse_feature_spec(extra);
  e.unbiased_variance = c.get<bool>("effects.unbiased_variance", false);
  if (e.contrast == Contrast::log_relative_risk && e.adjusted())
    throw Error("log_relative_risk contrasts cannot be covariate-adjusted");
  return e;
}

// ---------------------------------------------------------------------------

int cmd_fit_index(const Globals& g, const std::string& ipd_path) {
  Run run(g, "fit-index");
  auto& c = run.cfg();
  const auto kind = c.get<std::string>("index.kind", "linear");
  const auto holdouts = split_list(c.get<std::string>("index.holdout", ""));
  LogisticOptions lopts;
  lopts.max_iter = c.get<int>("index.max_iter", lopts.max_iter);
  lopts.tolerance = c.get<double>("index.tolerance", lopts.tolerance);

  auto in = open_in(ipd_path);
  auto data = io::read_ipd(in);
  require_valid(data.trials);
  MetaDataset train;
  std::set<std::string> held(holdouts.begin(), holdouts.end());
  for (auto& t : data.trials)
    if (!held.count(t.trial_id)) train.push_back(t);
  for (const auto& h : held) {
    bool found = false;
    for (const auto& t : data.trials) found = found || t.trial_id == h;
    if (!found) throw Error("holdout trial '" + h + "' not present in data");
  }

  SurrogateIndexModel model;
  std::optional<StackedFit> stacked;
  if (kind == "linear" || kind == "logistic") {
    const auto spec = io::parse_feature_spec(c.get<std::string>("index.features", "1 s"));
    model = fit_index(spec, kind == "linear" ? Family::linear : Family::logistic, train, lopts);
  } else if (kind == "stacked") {
    StackingConfig sc;
    sc.logistic = lopts;
    sc.max_iter = c.get<int>("stacking.max_iter", sc.max_iter);
    sc.tolerance = c.get<double>("stacking.tolerance", sc.tolerance);
    const auto loss = c.get<std::string>("stacking.loss", "binomial_loglik");
    if (loss == "binomial_loglik") sc.loss = StackLoss::binomial_loglik;
    else if (loss == "squared") sc.loss = StackLoss::squared;
    else throw Error("stacking.loss must be binomial_loglik or squared");
    for (const auto& name : split_list(c.get<std::string>("stacking.learners", ""))) {
      LearnerSpec ls;
      ls.name = name;
      const auto fam = c.get<std::string>(name + ".family", "logistic");
      if (fam != "linear" && fam != "logistic") throw Error(name + ".family must be linear or logistic");
      ls.family = fam == "linear" ? Family::linear : Family::logistic;
      ls.features = io::parse_feature_spec(c.get<std::string>(name + ".features", "1 s"));
      sc.learners.push_back(ls);
    }
    if (sc.learners.empty()) sc = [&] {
      auto d = default_vaccine_stacking();
      d.logistic = lopts;
      return d;
    }();
    stacked = fit_stacked(sc, train);
    model = stacked->model;
  } else {
    throw Error("index.kind must be linear, logistic or stacked");
  }
  run.finish_config();

  {
    auto f = run.out("model.txt");
    write_model(f, model);
  }
  auto rep = run.out("fit_report.txt");
  rep << "kind " << kind << "\ntraining_trials";
  for (const auto& t : train) rep << " " << t.trial_id;
  rep << "\n";
  for (const auto& h : held) {
    bool leaked = false;
    for (const auto& t : train) leaked = leaked || t.trial_id == h;
    if (leaked) throw Error("holdout trial leaked into training data");
    rep << "holdout " << h << " excluded_from_all_folds\n";
  }
  double wsum = 0.0;
  for (std::size_t k = 0; k < model.weights.size(); ++k) {
    rep << "weight " << k << " " << to_string(model.learners[k].family) << " " << io::fmt(model.weights[k]) << "\n";
    wsum += model.weights[k];
  }
  rep << "weight_sum " << io::fmt(wsum) << "\n";
  if (stacked) {
    rep << "cv_loss " << io::fmt(stacked->cv_loss) << "\n";
    for (const auto& w : stacked->warnings) rep << "warning " << w << "\n";
    auto cv = run.out("cv_loss.csv");
    cv << io::kCvLossHeader << "\ntrial_id,cv_loss\n";
    for (std::size_t i = 0; i < stacked->trial_ids.size(); ++i)
      cv << io::csv_field(stacked->trial_ids[i]) << "," << io::fmt(stacked->cv_loss_by_trial[i]) << "\n";
  }
  run.report();
  return 0;
}

int cmd_summarize(const Globals& g, const std::string& ipd_path, const std::string& model_path, bool raw) {
  Run run(g, "summarize");
  auto& c = run.cfg();
  if (raw == !model_path.empty()) throw Error("summarize needs exactly one of --model or --raw-surrogate");
  const auto a = effect_spec(c, "alpha", raw ? Target::surrogate_raw : Target::surrogate_index);
  auto b = effect_spec(c, "beta", Target::clinical);
  const auto variance = c.get<std::string>("effects.variance", "influence");
  const long within_boot = c.get<long>("effects.within_boot", 1000);
  if (variance != "influence" && variance != "bootstrap") throw Error("effects.variance must be influence or bootstrap");
  const auto seed = variance == "bootstrap" ? run.seed() : 0;
  run.finish_config();

  std::optional<SurrogateIndexModel> model;
  if (!raw) {
    auto mf = open_in(model_path);
    model = read_model(mf);
  }
  auto in = open_in(ipd_path);
  auto data = io::read_ipd(in);
  require_valid(data.trials);
  std::vector<io::SummaryRow> rows;
  for (std::size_t t = 0; t < data.trials.size(); ++t) {
    const auto& trial = data.trials[t];
    io::SummaryRow row;
    row.summary.trial_id = trial.trial_id;
    row.summary.n = static_cast<long>(trial.records.size());
    try {
      row.summary = joint_effects(trial, model ? &*model : nullptr, a, b);
      if (variance == "bootstrap")
        row.summary.cov = within_trial_bootstrap_cov(trial, model ? &*model : nullptr, a, b, within_boot,
                                                     derive_seed(seed, {static_cast<std::uint64_t>(t)}));
    } catch (const Error& e) {
      row.status = e.what();
      std::cerr << "trial " << trial.trial_id << ": " << e.what() << "\n";
    }
    rows.push_back(row);
  }
  auto f = run.out("summaries.csv");
  io::write_summaries(f, rows);
  run.report();
  return 0;
}

int cmd_meta(const Globals& g, const std::string& summaries_path) {
  Run run(g, "meta");
  auto& c = run.cfg();
  const double level = run.level();
  const auto opts = plugin_options(c, level);
  const long B = run.boot(2000);
  const auto scheme = c.get<std::string>("meta.bootstrap_scheme", "multiplier");
  BootstrapOptions bo;
  if (scheme == "multinomial") bo.scheme = BootScheme::multinomial;
  else if (scheme != "multiplier") throw Error("meta.bootstrap_scheme must be multiplier or multinomial");
  bo.threads = run.threads();
  const auto seed = run.seed();
  run.finish_config();

  auto in = open_in(summaries_path);
  const auto s = io::read_summaries(in);
  const std::span<const TrialSummary> sp(s);
  io::MetaReport r;
  r.level = level;
  r.theta = plugin_estimate(sp, opts, std::span<const double>{});
  r.sigma2 = sigma2_index_error(sp);
  std::string note;
  if (r.theta.rho) {
    try {
      r.wald = rho_ci_fisher_z(r.theta, static_cast<long>(s.size()), opts);
    } catch (const Error& e) {
      note = e.what();
    }
    if (B > 0) {
      const auto boot = bayesian_bootstrap_meta(sp, opts, B, seed, BootStatistic::rho, bo);
      if (!boot.rho.empty()) r.bca = bca_rho(boot, *r.theta.rho, jackknife_rho(sp, opts), level).interval;
      if (boot.failures > 0) note += "bootstrap: " + std::to_string(boot.failures) + " undefined replicates dropped; ";
    }
  } else {
    note = "rho is NA: a between-trial variance estimate is not positive";
  }
  {
    auto f = run.out("meta.csv");
    io::write_meta_report(f, r);
  }
  std::ostringstream txt;
  const auto& t = r.theta;
  txt << "trials             " << s.size() << "\n"
      << "mu_alpha           " << io::fmt(t.mu_alpha) << "\n"
      << "mu_beta            " << io::fmt(t.mu_beta) << "\n"
      << "d_alpha            " << io::fmt(t.d_alpha) << "\n"
      << "d_beta             " << io::fmt(t.d_beta) << "\n"
      << "d_alpha_beta       " << io::fmt(t.d_alpha_beta) << "\n"
      << "rho                " << io::fmt(t.rho) << "\n";
  if (r.wald) txt << "rho wald CI        (" << io::fmt(r.wald->lower) << ", " << io::fmt(r.wald->upper) << ")\n";
  if (r.bca) txt << "rho BCa CI         (" << io::fmt(r.bca->lower) << ", " << io::fmt(r.bca->upper) << ")\n";
  txt << "pd_adjusted        " << (t.pd_adjusted ? "yes" : "no") << "\n"
      << "sigma2_index_error " << io::fmt(r.sigma2.raw) << (r.sigma2.negative ? " (negative, floored at 0)" : "")
      << "\n";
  if (!note.empty()) txt << "note               " << note << "\n";
  {
    auto f = run.out("meta.txt");
    f << txt.str();
  }
  std::cout << txt.str();
  run.report();
  return 0;
}

int cmd_bayes(const Globals& g, const std::string& summaries_path) {
  Run run(g, "bayes");
  auto& c = run.cfg();
  const double level = run.level();
  McmcConfig d;
  d.iterations = 20000;
  d.burn_in = 10000;
  d.chains = 4;
  const auto m = mcmc_config(c, run.seed(), run.threads(), d);
  run.finish_config();

  auto in = open_in(summaries_path);
  const auto s = io::read_summaries(in);
  const auto res = metropolis_sample(s, m);
  const auto post = posterior_summary(res, level);
  {
    auto f = run.out("chains.csv");
    io::write_chains(f, res, m.burn_in, m.thin);
  }
  std::ostringstream txt;
  auto f = run.out("posterior.csv");
  f << "# surrometa-posterior v1\nparameter,median,lower,upper,ess,rhat\n";
  for (std::size_t p = 0; p < 5; ++p) {
    f << kHyperNames[p] << "," << io::fmt(post[p].median) << "," << io::fmt(post[p].interval.lower) << ","
      << io::fmt(post[p].interval.upper) << "," << io::fmt(res.diagnostics.ess[p]) << ","
      << io::fmt(res.diagnostics.rhat[p]) << "\n";
    txt << kHyperNames[p] << "  median " << io::fmt(post[p].median) << "  CrI (" << io::fmt(post[p].interval.lower)
        << ", " << io::fmt(post[p].interval.upper) << ")  ess " << io::fmt(res.diagnostics.ess[p]) << "\n";
  }
  for (std::size_t k = 0; k < res.diagnostics.acceptance.size(); ++k)
    txt << "chain " << k << " acceptance " << io::fmt(res.diagnostics.acceptance[k]) << "\n";
  if (res.diagnostics.acceptance_warning) txt << "warning: acceptance rate outside [0.05, 0.8]\n";
  txt << "note: credible intervals assume the bivariate normal model and are not calibrated for data-adaptive indices\n";
  std::cout << txt.str();
  run.report();
  return 0;
}

int cmd_predict(const Globals& g, const std::string& meta_path, const std::string& new_path) {
  Run run(g, "predict");
  const double level = run.level();
  run.finish_config();
  auto mf = open_in(meta_path);
  const auto rep = io::read_meta_report(mf);
  auto nf = open_in(new_path);
  const auto trials = io::read_new_trials(nf);
  std::vector<io::PredictionRow> rows;
  for (const auto& nt : trials) {
    {
      io::PredictionRow r{nt.trial_id, "interval"};
      const auto ci = prediction_interval(nt, rep.sigma2.floored, level);
      r.point = nt.alpha0_hat;
      r.variance = nt.var0 + rep.sigma2.floored;
      r.lower = ci.lower;
      r.upper = ci.upper;
      if (rep.sigma2.negative) r.status = "ok (sigma2 floored at 0)";
      rows.push_back(r);
    }
    for (const char* method : {"eb", "plugin"}) {
      io::PredictionRow r{nt.trial_id, method};
      try {
        const auto p = std::string(method) == "eb" ? eb_prediction(rep.theta, nt, level)
                                                   : plugin_prediction(rep.theta, nt, level);
        r.point = p.point;
        r.variance = p.variance;
        r.lower = p.interval.lower;
        r.upper = p.interval.upper;
      } catch (const Error& e) {
        r.status = e.what();
      }
      rows.push_back(r);
    }
  }
  auto f = run.out("predictions.csv");
  io::write_predictions(f, rows);
  run.report();
  return 0;
}

ViolationLevel parse_violation(const std::string& s) {
  if (s == "none") return ViolationLevel::none;
  if (s == "slight") return ViolationLevel::slight;
  if (s == "moderate") return ViolationLevel::moderate;
  throw Error("violation must be none, slight or moderate");
}

int cmd_simulate(const Globals& g) {
  Run run(g, "simulate");
  auto& c = run.cfg();
  ScenarioConfig sc;
  const auto scen = c.get<std::string>("simulate.scenario", "poc");
  if (scen == "poc") sc.scenario = Scenario::poc;
  else if (scen == "vaccine") sc.scenario = Scenario::vaccine;
  else throw Error("simulate.scenario must be poc or vaccine");
  sc.violation = parse_violation(c.get<std::string>("simulate.violation", "moderate"));
  sc.n_trials = c.get<long>("simulate.n_trials", sc.n_trials);
  sc.trial_size = c.get<long>("simulate.trial_size", default_trial_size(sc.scenario));
  sc.replications = c.get<long>("simulate.replications", sc.replications);
  sc.estimand_trials = c.get<long>("simulate.estimand_trials", default_estimand_trials(sc.scenario));
  sc.estimand_size = c.get<long>("simulate.estimand_size", default_estimand_size(sc.scenario));
  sc.bayes = c.get<bool>("simulate.bayes", false);
  sc.seed = run.seed();
  sc.boot = run.boot(sc.boot);
  sc.level = run.level();
  sc.threads = run.threads();
  sc.plugin = plugin_options(c, sc.level);
  if (sc.bayes) sc.mcmc = mcmc_config(c, sc.seed, 1);
  run.finish_config();

  const auto rows = run_study(sc);
  {
    auto f = run.out("study.csv");
    io::write_study(f, rows);
  }
  auto f = run.out("study_summary.csv");
  io::write_study_summary(f, summarize_study(rows));
  run.report();
  return 0;
}

int cmd_regime(const Globals& g) {
  Run run(g, "regime");
  auto& c = run.cfg();
  RegimeConfig rc;
  rc.n_grid = c.get_list("regime.n_grid", rc.n_grid);
  rc.N_grid = c.get_list("regime.N_grid", rc.N_grid);
  rc.replications = c.get<long>("regime.replications", rc.replications);
  rc.violation = parse_violation(c.get<std::string>("regime.violation", "moderate"));
  rc.spline_df = c.get<int>("regime.spline_df", rc.spline_df);
  rc.seed = run.seed();
  rc.threads = run.threads();
  rc.plugin = plugin_options(c, run.level());
  run.finish_config();
  const auto rows = run_regime_experiment(rc);
  {
    auto f = run.out("regime.csv");
    io::write_regime(f, rows);
  }
  auto f = run.out("regime_summary.csv");
  io::write_regime_summary(f, summarize_regime(rows));
  run.report();
  return 0;
}

int cmd_adjust_titer(const Globals& g, const std::string& ipd_path, const std::string& gmt_path,
                     const std::string& mix_path) {
  Run run(g, "adjust-titer");
  auto& c = run.cfg();
  const auto in_scale = c.get<std::string>("adjust.input_scale", "id50");
  const auto out_scale = c.get<std::string>("adjust.output_scale", "id50");
  for (const auto& s : {in_scale, out_scale})
    if (s != "id50" && s != "log10") throw Error("adjust scales must be id50 or log10");
  run.finish_config();

  GmtTable table;
  if (gmt_path == "published") {
    table = published_gmt_table();
  } else {
    auto gf = open_in(gmt_path);
    table = io::read_gmt(gf);
  }
  auto mf = open_in(mix_path);
  const auto mix = io::read_mix(mf);
  auto in = open_in(ipd_path);
  auto data = io::read_ipd(in);
  if (!data.has_subject_ids) throw Error("adjust-titer: the IPD file needs a subject_id column");
  auto rep = run.out("adjust_report.csv");
  rep << "# surrometa-adjust-report v1\ntrial_id,subject_id,factor,status\n";
  for (std::size_t t = 0; t < data.trials.size(); ++t) {
    auto& trial = data.trials[t];
    if (!table.has_trial(trial.trial_id)) throw Error("gmt table: no row for trial '" + trial.trial_id + "'");
    for (std::size_t i = 0; i < trial.records.size(); ++i) {
      auto& r = trial.records[i];
      const auto& sid = data.subject_ids[t][i];
      if (!r.surrogate) continue;
      const double s_ref = in_scale == "log10" ? std::pow(10.0, *r.surrogate) : *r.surrogate;
      auto it = mix.find(sid);
      std::optional<double> adj;
      double factor = 0.0;
      if (it != mix.end()) {
        const auto usable = drop_unavailable_strains(it->second, table, trial.trial_id);
        factor = adjustment_factor(usable, table, trial.trial_id);
        adj = adjust_subject_titer(s_ref, it->second, table, trial.trial_id);
      }
      rep << io::csv_field(trial.trial_id) << "," << io::csv_field(sid) << "," << io::fmt(factor) << ","
          << (adj ? "adjusted" : "unadjustable") << "\n";
      if (adj) r.surrogate = out_scale == "log10" ? std::log10(*adj) : *adj;
      else r.surrogate.reset();
    }
  }
  auto f = run.out("ipd_adjusted.csv");
  io::write_ipd(f, data.trials, &data.subject_ids);
  run.report();
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"surrometa: trial-level surrogacy of surrogate endpoints and surrogate indices"};
  app.require_subcommand(1);
  Globals g;
  app.add_option("--config", g.config, "Configuration file (INI sections)");
  app.add_option("--seed", g.seed, "Master random seed");
  app.add_option("--boot", g.boot, "Bootstrap replicates (0 disables)");
  app.add_option("--level", g.level, "Confidence/credible level")->check(CLI::Range(0.0, 1.0));
  app.add_option("--threads", g.threads, "Worker threads (default: SURROMETA_THREADS or 1)");
  app.add_option("--out", g.out, "Output directory");
  app.fallthrough();

  std::string a1, a2, a3, model;
  bool raw = false;
  auto* fit = app.add_subcommand("fit-index", "Fit a surrogate index on pooled IPD");
  fit->add_option("ipd", a1, "IPD CSV")->required();
  auto* sum = app.add_subcommand("summarize", "Per-trial effect estimates and covariances");
  sum->add_option("ipd", a1, "IPD CSV")->required();
  sum->add_option("--model", model, "Fitted index model");
  sum->add_flag("--raw-surrogate", raw, "Use the untransformed surrogate");
  auto* meta = app.add_subcommand("meta", "Plug-in meta-analysis with sandwich and BCa intervals");
  meta->add_option("summaries", a1, "Summaries CSV")->required();
  auto* bayes = app.add_subcommand("bayes", "Bayesian hierarchical meta-analysis");
  bayes->add_option("summaries", a1, "Summaries CSV")->required();
  auto* pred = app.add_subcommand("predict", "Predict clinical effects for new trials");
  pred->add_option("meta", a1, "Meta report CSV")->required();
  pred->add_option("new_trials", a2, "New-trial effects CSV")->required();
  auto* sim = app.add_subcommand("simulate", "Run the simulation study");
  auto* reg = app.add_subcommand("regime", "Run the n/N regime experiment");
  auto* adj = app.add_subcommand("adjust-titer", "Adjust neutralization titers to circulating strains");
  adj->add_option("ipd", a1, "IPD CSV with subject_id")->required();
  adj->add_option("gmt", a2, "GMT ratio CSV, or 'published'")->required();
  adj->add_option("mix", a3, "Strain mix CSV")->required();

  CLI11_PARSE(app, argc, argv);
  try {
    if (*fit) return cmd_fit_index(g, a1);
    if (*sum) return cmd_summarize(g, a1, model, raw);
    if (*meta) return cmd_meta(g, a1);
    if (*bayes) return cmd_bayes(g, a1);
    if (*pred) return cmd_predict(g, a1, a2);
    if (*sim) return cmd_simulate(g);
    if (*reg) return cmd_regime(g);
    if (*adj) return cmd_adjust_titer(g, a1, a2, a3);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}
