// CSV formats and run configuration. Every CSV starts with a versioned
// comment line ("# surrometa-<kind> v<k>"); readers reject other versions.
// Reals are written with 17 significant digits, missing values as empty
// fields (IPD) or "NA" (reports).

#pragma once

#include "surrometa/bayes_meta.hpp"
#include "surrometa/core.hpp"
#include "surrometa/meta_plugin.hpp"
#include "surrometa/prediction.hpp"
#include "surrometa/simulation.hpp"
#include "surrometa/strain_adjust.hpp"
#include "surrometa/surrogate_index.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <boost/tokenizer.hpp>

#include <fstream>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

namespace surrometa::io {

inline constexpr const char* kIpdHeader = "# surrometa-ipd v1";
inline constexpr const char* kSummaryHeader = "# surrometa-summaries v1";
inline constexpr const char* kMetaHeader = "# surrometa-meta v1";
inline constexpr const char* kNewTrialHeader = "# surrometa-newtrials v1";
inline constexpr const char* kGmtHeader = "# surrometa-gmt v1";
inline constexpr const char* kMixHeader = "# surrometa-mix v1";
inline constexpr const char* kChainHeader = "# surrometa-chains v1";
inline constexpr const char* kPredictionHeader = "# surrometa-predictions v1";
inline constexpr const char* kStudyHeader = "# surrometa-study v1";
inline constexpr const char* kStudySummaryHeader = "# surrometa-study-summary v1";
inline constexpr const char* kRegimeHeader = "# surrometa-regime v1";
inline constexpr const char* kRegimeSummaryHeader = "# surrometa-regime-summary v1";
inline constexpr const char* kCvLossHeader = "# surrometa-cvloss v1";

// ---------------------------------------------------------------------------
// CSV primitives

inline std::vector<std::string> split_csv(const std::string& line) {
  using Sep = boost::escaped_list_separator<char>;
  boost::tokenizer<Sep> tok(line, Sep('\\', ',', '"'));
  std::vector<std::string> out(tok.begin(), tok.end());
  if (!out.empty() && !out.back().empty() && out.back().back() == '\r') out.back().pop_back();
  return out;
}

inline std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\\\n") == std::string::npos) return s;
  std::string q = "\"";
  for (char c : s) {
    if (c == '"' || c == '\\') q += '\\';
    q += c;
  }
  return q + "\"";
}

inline std::string fmt(double x) { return std::isfinite(x) ? format_real(x) : std::string("NA"); }
inline std::string fmt(const std::optional<double>& x) { return x ? fmt(*x) : std::string("NA"); }

/// Reads the version line and the column header.
inline std::vector<std::string> read_preamble(std::istream& is, const char* expected, const std::string& what) {
  std::string line;
  if (!std::getline(is, line)) throw Error(what + ": empty file");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != expected) {
    const std::string want(expected);
    const std::string stem = want.substr(0, want.rfind(' '));
    if (line.rfind(stem, 0) == 0) throw Error(what + ": unsupported version '" + line + "', expected '" + want + "'");
    throw Error(what + ": missing version header '" + want + "'");
  }
  if (!std::getline(is, line)) throw Error(what + ": missing column header");
  return split_csv(line);
}

class Columns {
 public:
  Columns(std::vector<std::string> names, const std::string& what) : names_(std::move(names)), what_(what) {}
  std::size_t at(const std::string& name) const {
    for (std::size_t i = 0; i < names_.size(); ++i)
      if (names_[i] == name) return i;
    throw Error(what_ + ": missing column '" + name + "'");
  }
  const std::vector<std::string>& names() const { return names_; }

 private:
  std::vector<std::string> names_;
  std::string what_;
};

template <class Fn>
void for_each_row(std::istream& is, std::size_t width, const std::string& what, Fn&& fn) {
  std::string line;
  long lineno = 2;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty() || line == "\r" || line[0] == '#') continue;
    auto f = split_csv(line);
    if (f.size() != width)
      throw Error(what + ": line " + std::to_string(lineno) + " has " + std::to_string(f.size()) + " fields, expected " +
                  std::to_string(width));
    try {
      fn(f);
    } catch (const Error& e) {
      throw Error(what + ": line " + std::to_string(lineno) + ": " + e.what());
    }
  }
}

inline double parse_required(const std::string& s, const std::string& col) {
  if (s.empty() || s == "NA") throw Error("missing value in column '" + col + "'");
  return parse_real(s);
}

inline std::optional<double> parse_optional(const std::string& s) {
  if (s.empty() || s == "NA") return std::nullopt;
  return parse_real(s);
}

inline long parse_long(const std::string& s, const std::string& col) {
  std::size_t pos = 0;
  long v = 0;
  try {
    v = std::stol(s, &pos);
  } catch (const std::exception&) {
    throw Error("column '" + col + "': not an integer: '" + s + "'");
  }
  if (pos != s.size()) throw Error("column '" + col + "': not an integer: '" + s + "'");
  return v;
}

// ---------------------------------------------------------------------------
// Individual patient data

struct IpdData {
  MetaDataset trials;
  /// Per trial and record; empty when the file has no subject_id column.
  std::vector<std::vector<std::string>> subject_ids;
  bool has_subject_ids = false;
};

/// Columns: trial_id, [subject_id,] z, y, s, weight, then one column per
/// covariate. Trials keep their order of first appearance.
inline IpdData read_ipd(std::istream& is) {
  Columns cols(read_preamble(is, kIpdHeader, "ipd"), "ipd");
  const auto& names = cols.names();
  IpdData out;
  const std::size_t c_trial = cols.at("trial_id");
  std::optional<std::size_t> c_subject;
  for (std::size_t i = 0; i < names.size(); ++i)
    if (names[i] == "subject_id") c_subject = i;
  out.has_subject_ids = c_subject.has_value();
  const std::size_t c_z = cols.at("z"), c_y = cols.at("y"), c_s = cols.at("s"), c_w = cols.at("weight");
  std::vector<std::size_t> c_x;
  std::vector<std::string> covnames;
  const std::set<std::string> fixed = {"trial_id", "subject_id", "z", "y", "s", "weight"};
  for (std::size_t i = 0; i < names.size(); ++i)
    if (!fixed.count(names[i])) {
      c_x.push_back(i);
      covnames.push_back(names[i]);
    }
  std::map<std::string, std::size_t> index;
  for_each_row(is, names.size(), "ipd", [&](const std::vector<std::string>& f) {
    auto [it, fresh] = index.emplace(f[c_trial], out.trials.size());
    if (fresh) {
      out.trials.push_back({f[c_trial], covnames, {}});
      out.subject_ids.emplace_back();
    }
    PatientRecord r;
    const long z = parse_long(f[c_z], "z");
    if (z != 0 && z != 1) throw Error("treatment must be 0 or 1");
    r.treatment = static_cast<int>(z);
    r.outcome = parse_optional(f[c_y]);
    r.surrogate = parse_optional(f[c_s]);
    r.weight = f[c_w].empty() ? 1.0 : parse_real(f[c_w]);
    for (std::size_t k = 0; k < c_x.size(); ++k) r.covariates.push_back(parse_required(f[c_x[k]], covnames[k]));
    out.trials[it->second].records.push_back(std::move(r));
    out.subject_ids[it->second].push_back(c_subject ? f[*c_subject] : std::string());
  });
  return out;
}

inline void write_ipd(std::ostream& os, const MetaDataset& trials,
                      const std::vector<std::vector<std::string>>* subject_ids = nullptr) {
  os << kIpdHeader << "\ntrial_id";
  if (subject_ids) os << ",subject_id";
  os << ",z,y,s,weight";
  const auto covnames = trials.empty() ? std::vector<std::string>{} : trials.front().covariate_names;
  for (const auto& c : covnames) os << "," << csv_field(c);
  os << "\n";
  auto opt = [](const std::optional<double>& v) { return v ? format_real(*v) : std::string(); };
  for (std::size_t t = 0; t < trials.size(); ++t) {
    const auto& tr = trials[t];
    if (tr.covariate_names != covnames) throw Error("write_ipd: trials disagree on covariates");
    for (std::size_t i = 0; i < tr.records.size(); ++i) {
      const auto& r = tr.records[i];
      os << csv_field(tr.trial_id);
      if (subject_ids) os << "," << csv_field((*subject_ids)[t][i]);
      os << "," << r.treatment << "," << opt(r.outcome) << "," << opt(r.surrogate) << "," << format_real(r.weight);
      for (double x : r.covariates) os << "," << format_real(x);
      os << "\n";
    }
  }
}

// ---------------------------------------------------------------------------
// Trial summaries

struct SummaryRow {
  TrialSummary summary;
  std::string status = "ok";
};

inline void write_summaries(std::ostream& os, const std::vector<SummaryRow>& rows) {
  os << kSummaryHeader << "\ntrial_id,n,alpha_hat,beta_hat,var_a,var_b,cov_ab,status\n";
  for (const auto& r : rows) {
    const auto& s = r.summary;
    os << csv_field(s.trial_id) << "," << s.n;
    if (r.status == "ok") {
      os << "," << format_real(s.alpha_hat) << "," << format_real(s.beta_hat) << "," << format_real(s.var_alpha())
         << "," << format_real(s.var_beta()) << "," << format_real(s.cov_alpha_beta());
    } else {
      os << ",NA,NA,NA,NA,NA";
    }
    os << "," << csv_field(r.status) << "\n";
  }
}

inline void write_summaries(std::ostream& os, const std::vector<TrialSummary>& s) {
  std::vector<SummaryRow> rows;
  for (const auto& x : s) rows.push_back({x, "ok"});
  write_summaries(os, rows);
}

/// Rows whose status is not "ok" are skipped.
inline std::vector<TrialSummary> read_summaries(std::istream& is) {
  Columns cols(read_preamble(is, kSummaryHeader, "summaries"), "summaries");
  const std::size_t ci = cols.at("trial_id"), cn = cols.at("n"), ca = cols.at("alpha_hat"), cb = cols.at("beta_hat"),
                    cva = cols.at("var_a"), cvb = cols.at("var_b"), cab = cols.at("cov_ab");
  std::optional<std::size_t> cs;
  for (std::size_t i = 0; i < cols.names().size(); ++i)
    if (cols.names()[i] == "status") cs = i;
  std::vector<TrialSummary> out;
  for_each_row(is, cols.names().size(), "summaries", [&](const std::vector<std::string>& f) {
    if (cs && f[*cs] != "ok") return;
    TrialSummary s;
    s.trial_id = f[ci];
    s.n = parse_long(f[cn], "n");
    s.alpha_hat = parse_required(f[ca], "alpha_hat");
    s.beta_hat = parse_required(f[cb], "beta_hat");
    s.cov(0, 0) = parse_required(f[cva], "var_a");
    s.cov(1, 1) = parse_required(f[cvb], "var_b");
    s.cov(0, 1) = s.cov(1, 0) = parse_required(f[cab], "cov_ab");
    out.push_back(s);
  });
  return out;
}

// ---------------------------------------------------------------------------
// Meta-analysis report (long format: quantity, estimate, se, lower, upper)

struct MetaReport {
  ThetaEstimate theta;
  std::optional<Interval> wald;
  std::optional<Interval> bca;
  Sigma2Estimate sigma2;
  double level = 0.95;
  std::string note;
};

inline void write_meta_report(std::ostream& os, const MetaReport& r) {
  os << kMetaHeader << "\nquantity,estimate,se,lower,upper\n";
  const auto& t = r.theta;
  const char* names[5] = {"mu_alpha", "mu_beta", "d_alpha", "d_beta", "d_alpha_beta"};
  const double vals[5] = {t.mu_alpha, t.mu_beta, t.d_alpha, t.d_beta, t.d_alpha_beta};
  const bool has_vcov = t.vcov.allFinite() && t.vcov.cwiseAbs().sum() > 0.0;
  for (int k = 0; k < 5; ++k) {
    const auto se = has_vcov ? std::optional<double>(std::sqrt(std::max(0.0, t.vcov(k, k)))) : std::nullopt;
    os << names[k] << "," << fmt(vals[k]) << "," << fmt(se) << ",NA,NA\n";
  }
  const auto rv = rho_variance(t);
  os << "rho," << fmt(t.rho) << "," << fmt(rv ? std::optional<double>(std::sqrt(std::max(0.0, *rv))) : std::nullopt)
     << "," << (r.wald ? fmt(r.wald->lower) : "NA") << "," << (r.wald ? fmt(r.wald->upper) : "NA") << "\n";
  if (r.bca) os << "rho_bca," << fmt(t.rho) << ",NA," << fmt(r.bca->lower) << "," << fmt(r.bca->upper) << "\n";
  os << "sigma2_index_error," << fmt(r.sigma2.raw) << ",NA,NA,NA\n";
  os << "sigma2_negative," << (r.sigma2.negative ? 1 : 0) << ",NA,NA,NA\n";
  os << "pd_adjusted," << (t.pd_adjusted ? 1 : 0) << ",NA,NA,NA\n";
  os << "n_trials," << t.n_trials << ",NA,NA,NA\n";
  os << "level," << fmt(r.level) << ",NA,NA,NA\n";
}

/// Recovers theta (point values) and sigma2 from a meta report.
inline MetaReport read_meta_report(std::istream& is) {
  Columns cols(read_preamble(is, kMetaHeader, "meta report"), "meta report");
  const std::size_t cq = cols.at("quantity"), ce = cols.at("estimate");
  std::map<std::string, std::string> vals;
  for_each_row(is, cols.names().size(), "meta report",
               [&](const std::vector<std::string>& f) { vals[f[cq]] = f[ce]; });
  auto get = [&](const std::string& k) -> std::string {
    auto it = vals.find(k);
    if (it == vals.end()) throw Error("meta report: missing quantity '" + k + "'");
    return it->second;
  };
  MetaReport r;
  r.theta.mu_alpha = parse_required(get("mu_alpha"), "mu_alpha");
  r.theta.mu_beta = parse_required(get("mu_beta"), "mu_beta");
  r.theta.d_alpha = parse_required(get("d_alpha"), "d_alpha");
  r.theta.d_beta = parse_required(get("d_beta"), "d_beta");
  r.theta.d_alpha_beta = parse_required(get("d_alpha_beta"), "d_alpha_beta");
  r.theta.rho = parse_optional(get("rho"));
  r.theta.pd_adjusted = get("pd_adjusted") == "1";
  r.theta.n_trials = parse_long(get("n_trials"), "n_trials");
  r.sigma2.raw = parse_required(get("sigma2_index_error"), "sigma2_index_error");
  r.sigma2.negative = r.sigma2.raw < 0.0;
  r.sigma2.floored = std::max(0.0, r.sigma2.raw);
  r.level = parse_required(get("level"), "level");
  return r;
}

// ---------------------------------------------------------------------------
// New-trial effects and predictions

inline std::vector<NewTrialEffect> read_new_trials(std::istream& is) {
  Columns cols(read_preamble(is, kNewTrialHeader, "new trials"), "new trials");
  const std::size_t ci = cols.at("trial_id"), ca = cols.at("alpha0_hat"), cv = cols.at("var0");
  std::vector<NewTrialEffect> out;
  for_each_row(is, cols.names().size(), "new trials", [&](const std::vector<std::string>& f) {
    NewTrialEffect e{f[ci], parse_required(f[ca], "alpha0_hat"), parse_required(f[cv], "var0")};
    if (e.var0 < 0.0) throw Error("var0 must be nonnegative");
    out.push_back(e);
  });
  return out;
}

inline void write_new_trials(std::ostream& os, const std::vector<NewTrialEffect>& v) {
  os << kNewTrialHeader << "\ntrial_id,alpha0_hat,var0\n";
  for (const auto& e : v) os << csv_field(e.trial_id) << "," << format_real(e.alpha0_hat) << "," << format_real(e.var0) << "\n";
}

struct PredictionRow {
  std::string trial_id;
  std::string method;  // interval | eb | plugin
  std::optional<double> point, variance, lower, upper;
  std::string status = "ok";
};

inline void write_predictions(std::ostream& os, const std::vector<PredictionRow>& rows) {
  os << kPredictionHeader << "\ntrial_id,method,point,variance,lower,upper,status\n";
  for (const auto& r : rows)
    os << csv_field(r.trial_id) << "," << r.method << "," << fmt(r.point) << "," << fmt(r.variance) << ","
       << fmt(r.lower) << "," << fmt(r.upper) << "," << csv_field(r.status) << "\n";
}

// ---------------------------------------------------------------------------
// Strain tables

inline GmtTable read_gmt(std::istream& is) {
  Columns cols(read_preamble(is, kGmtHeader, "gmt"), "gmt");
  const std::size_t ct = cols.at("trial_id"), cs = cols.at("strain"), cc = cols.at("c");
  GmtTable t;
  for_each_row(is, cols.names().size(), "gmt",
               [&](const std::vector<std::string>& f) { t.add(f[ct], f[cs], parse_required(f[cc], "c")); });
  return t;
}

inline void write_gmt(std::ostream& os, const GmtTable& t) {
  os << kGmtHeader << "\ntrial_id,strain,c\n";
  for (const auto& [trial, row] : t.rows())
    for (const auto& [strain, c] : row) os << csv_field(trial) << "," << csv_field(strain) << "," << format_real(c) << "\n";
}

inline std::map<std::string, StrainMix> read_mix(std::istream& is) {
  Columns cols(read_preamble(is, kMixHeader, "mix"), "mix");
  const std::size_t ci = cols.at("subject_id"), cs = cols.at("strain"), cw = cols.at("weight");
  std::map<std::string, StrainMix> out;
  for_each_row(is, cols.names().size(), "mix", [&](const std::vector<std::string>& f) {
    out[f[ci]].weights.emplace_back(f[cs], parse_required(f[cw], "weight"));
  });
  for (const auto& [id, m] : out) {
    try {
      m.validate();
    } catch (const Error& e) {
      throw Error("mix: subject '" + id + "': " + e.what());
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// MCMC chains and simulation tables

inline void write_chains(std::ostream& os, const McmcResult& res, long burn_in, long thin) {
  os << kChainHeader << "\niteration,chain,mu_alpha,mu_beta,sd_alpha,sd_beta,rho,log_post\n";
  for (std::size_t c = 0; c < res.chains.size(); ++c)
    for (std::size_t i = 0; i < res.chains[c].size(); ++i) {
      const auto& d = res.chains[c][i];
      os << burn_in + static_cast<long>(i) * thin << "," << c;
      for (double v : d.h.values()) os << "," << format_real(v);
      os << "," << fmt(d.log_post) << "\n";
    }
}

inline void write_study(std::ostream& os, const std::vector<StudyRow>& rows) {
  os << kStudyHeader
     << "\nreplication,surrogate,n_trials,estimand,rho,rho_no_pd,pd_adjusted,se,wald_lower,wald_upper,wald_covers,"
        "bca_lower,bca_upper,bca_covers,bayes_median,bayes_lower,bayes_upper,bayes_covers,error\n";
  auto ci = [](const std::optional<Interval>& i, const std::optional<double>& truth) {
    std::string s = i ? fmt(i->lower) + "," + fmt(i->upper) : std::string("NA,NA");
    const auto c = covers(i, truth);
    return s + "," + (c ? (*c ? "1" : "0") : "NA");
  };
  for (const auto& r : rows) {
    os << r.replication << "," << to_string(r.def) << "," << r.n_trials << "," << fmt(r.estimand) << "," << fmt(r.rho)
       << "," << fmt(r.rho_no_pd) << "," << (r.pd_adjusted ? 1 : 0) << "," << fmt(r.se) << "," << ci(r.wald, r.estimand)
       << "," << ci(r.bca, r.estimand) << "," << fmt(r.bayes_median) << "," << ci(r.bayes, r.estimand) << ","
       << csv_field(r.error) << "\n";
  }
}

inline void write_study_summary(std::ostream& os, const std::vector<StudySummary>& s) {
  os << kStudySummaryHeader
     << "\nsurrogate,replications,failures,median_estimand,median_rho,median_bias,mse,median_bias_no_pd,mse_no_pd,"
        "pd_adjusted_rate,coverage_wald,coverage_bca,coverage_bayes\n";
  for (const auto& x : s)
    os << to_string(x.def) << "," << x.replications << "," << x.failures << "," << fmt(x.median_estimand) << ","
       << fmt(x.median_rho) << "," << fmt(x.median_bias) << "," << fmt(x.mse) << "," << fmt(x.median_bias_no_pd) << ","
       << fmt(x.mse_no_pd) << "," << fmt(x.pd_adjusted_rate) << "," << fmt(x.coverage_wald) << ","
       << fmt(x.coverage_bca) << "," << fmt(x.coverage_bayes) << "\n";
}

inline void write_regime(std::ostream& os, const std::vector<RegimeRow>& rows) {
  os << kRegimeHeader << "\nn,N,replication,rho,se,z,covers,error\n";
  for (const auto& r : rows)
    os << r.n << "," << r.N << "," << r.replication << "," << fmt(r.rho) << "," << fmt(r.se) << "," << fmt(r.z) << ","
       << (r.covered ? (*r.covered ? "1" : "0") : "NA") << "," << csv_field(r.error) << "\n";
}

inline void write_regime_summary(std::ostream& os, const std::vector<RegimeCell>& cells) {
  os << kRegimeSummaryHeader << "\nn,N,replications,failures,z_mean,z_var,coverage\n";
  for (const auto& c : cells)
    os << c.n << "," << c.N << "," << c.replications << "," << c.failures << "," << fmt(c.z_mean) << ","
       << fmt(c.z_var) << "," << fmt(c.coverage) << "\n";
}

// ---------------------------------------------------------------------------
// Configuration: INI-style key/value file with sections. Every key read is
// recorded; unknown keys are rejected and the effective configuration
// (defaults included) can be echoed back.

class Config {
 public:
  Config() = default;

  static Config from_file(const std::string& path) {
    Config c;
    if (!path.empty()) {
      std::ifstream f(path);
      if (!f) throw Error("cannot open config file '" + path + "'");
      c.load(f);
    }
    return c;
  }

  void load(std::istream& is) {
    try {
      boost::property_tree::ini_parser::read_ini(is, tree_);
    } catch (const boost::property_tree::ini_parser_error& e) {
      throw Error(std::string("config: ") + e.what());
    }
  }

  /// Flag overrides take precedence over file values.
  void set(const std::string& key, const std::string& value) { tree_.put(path(key), value); }

  template <class T>
  T get(const std::string& key, const T& fallback) {
    T v = fallback;
    if (auto node = tree_.get_optional<std::string>(path(key))) v = convert<T>(*node, key);
    echo_[key] = to_text(v);
    return v;
  }

  std::vector<long> get_list(const std::string& key, const std::vector<long>& fallback) {
    std::vector<long> v = fallback;
    if (auto node = tree_.get_optional<std::string>(path(key))) {
      v.clear();
      std::stringstream ss(*node);
      std::string item;
      while (std::getline(ss, item, ',')) v.push_back(convert<long>(trim(item), key));
    }
    std::string t;
    for (std::size_t i = 0; i < v.size(); ++i) t += (i ? "," : "") + std::to_string(v[i]);
    echo_[key] = t;
    return v;
  }

  /// Throws on any key present in the file but never read.
  void reject_unknown() const {
    std::vector<std::string> unknown;
    for (const auto& [section, node] : tree_) {
      if (node.empty()) {
        if (!echo_.count(section)) unknown.push_back(section);
        continue;
      }
      for (const auto& [k, _] : node) {
        const std::string key = section + "." + k;
        if (!echo_.count(key)) unknown.push_back(key);
      }
    }
    if (!unknown.empty()) {
      std::string msg = "config: unknown key(s):";
      for (const auto& k : unknown) msg += " " + k;
      throw Error(msg);
    }
  }

  /// Effective configuration as INI text.
  std::string effective() const {
    std::map<std::string, std::vector<std::pair<std::string, std::string>>> sections;
    for (const auto& [key, v] : echo_) {
      const auto dot = key.find('.');
      if (dot == std::string::npos) sections[""].emplace_back(key, v);
      else sections[key.substr(0, dot)].emplace_back(key.substr(dot + 1), v);
    }
    std::string out;
    for (const auto& [k, v] : sections[""]) out += k + " = " + v + "\n";
    for (const auto& [sec, kv] : sections) {
      if (sec.empty()) continue;
      out += "\n[" + sec + "]\n";
      for (const auto& [k, v] : kv) out += k + " = " + v + "\n";
    }
    return out;
  }

 private:
  static boost::property_tree::ptree::path_type path(const std::string& key) { return {key, '.'}; }

  static std::string trim(const std::string& s) {
    const auto a = s.find_first_not_of(" \t");
    const auto b = s.find_last_not_of(" \t");
    return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
  }

  template <class T>
  static T convert(const std::string& raw, const std::string& key) {
    const std::string s = trim(raw);
    if constexpr (std::is_same_v<T, std::string>) {
      return s;
    } else if constexpr (std::is_same_v<T, bool>) {
      if (s == "true" || s == "1" || s == "yes" || s == "on") return true;
      if (s == "false" || s == "0" || s == "no" || s == "off") return false;
      throw Error("config: '" + key + "' expects a boolean, got '" + s + "'");
    } else if constexpr (std::is_floating_point_v<T>) {
      try {
        return parse_real(s);
      } catch (const Error&) {
        throw Error("config: '" + key + "' expects a number, got '" + s + "'");
      }
    } else {
      std::size_t pos = 0;
      T v{};
      try {
        if constexpr (std::is_unsigned_v<T>) v = static_cast<T>(std::stoull(s, &pos));
        else v = static_cast<T>(std::stoll(s, &pos));
      } catch (const std::exception&) {
        pos = 0;
      }
      if (s.empty() || pos != s.size() || (std::is_unsigned_v<T> && s[0] == '-'))
        throw Error("config: '" + key + "' expects an integer, got '" + s + "'");
      return v;
    }
  }

  template <class T>
  static std::string to_text(const T& v) {
    if constexpr (std::is_same_v<T, std::string>) return v;
    else if constexpr (std::is_same_v<T, bool>) return v ? "true" : "false";
    else if constexpr (std::is_floating_point_v<T>) return format_real(v);
    else return std::to_string(v);
  }

  boost::property_tree::ptree tree_;
  std::map<std::string, std::string> echo_;
};

// ---------------------------------------------------------------------------
// Feature spec text: whitespace-separated terms, e.g.
//   "1 s x1 s*x1 s^2 bs(x2,8) bs(s,5,3,nointercept)"
// where "1" is the intercept and "s" the surrogate.

inline std::string field_name(const std::string& s) { return s == "s" ? std::string(kSurrogateField) : s; }

inline Term parse_term(const std::string& tok) {
  if (tok == "1") return Term::intercept();
  if (tok.rfind("bs(", 0) == 0 && tok.back() == ')') {
    std::vector<std::string> parts;
    std::stringstream ss(tok.substr(3, tok.size() - 4));
    std::string p;
    while (std::getline(ss, p, ',')) parts.push_back(p);
    if (parts.size() < 2 || parts.size() > 4) throw Error("feature term '" + tok + "': expected bs(name,df[,degree][,nointercept])");
    int degree = 3;
    bool icpt = true;
    for (std::size_t i = 2; i < parts.size(); ++i) {
      if (parts[i] == "nointercept") icpt = false;
      else degree = static_cast<int>(parse_long(parts[i], "degree"));
    }
    return Term::bspline(field_name(parts[0]), static_cast<int>(parse_long(parts[1], "df")), degree, icpt);
  }
  if (auto star = tok.find('*'); star != std::string::npos)
    return Term::interaction(field_name(tok.substr(0, star)), field_name(tok.substr(star + 1)));
  if (tok.size() > 2 && tok.compare(tok.size() - 2, 2, "^2") == 0) return Term::square(field_name(tok.substr(0, tok.size() - 2)));
  if (tok.empty()) throw Error("empty feature term");
  return Term::raw(field_name(tok));
}

inline FeatureSpec parse_feature_spec(const std::string& text) {
  FeatureSpec f;
  std::stringstream ss(text);
  std::string tok;
  while (ss >> tok) f.terms.push_back(parse_term(tok));
  if (f.terms.empty()) throw Error("feature spec is empty");
  return f;
}

}  // namespace surrometa::io
