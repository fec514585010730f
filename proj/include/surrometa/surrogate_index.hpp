// Surrogate index g_N: pooled regression of the clinical endpoint on
// baseline covariates and the surrogate, optionally as a stacked ensemble
// whose weights come from leave-one-trial-out cross-validation.

#pragma once

#include "surrometa/core.hpp"
#include "surrometa/features.hpp"
#include "surrometa/regression.hpp"

#include <Eigen/Dense>

#include <charconv>
#include <cstdio>
#include <istream>
#include <map>
#include <numeric>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

namespace surrometa {

enum class Family { linear, logistic };
enum class ModelKind { linear, logistic, ensemble };

inline const char* to_string(Family f) { return f == Family::linear ? "linear" : "logistic"; }
inline const char* to_string(ModelKind k) {
  switch (k) {
    case ModelKind::linear: return "linear";
    case ModelKind::logistic: return "logistic";
    default: return "ensemble";
  }
}

struct Learner {
  FeatureSpec features;  // knots resolved
  Family family = Family::linear;
  Eigen::VectorXd coefficients;
};

struct SurrogateIndexModel {
  ModelKind kind = ModelKind::linear;
  std::vector<Learner> learners;
  std::vector<double> weights;  // simplex weights, one per learner

  bool uses_surrogate() const {
    for (const auto& l : learners)
      if (l.features.uses_surrogate()) return true;
    return false;
  }
};

/// A model bound to a covariate layout, for repeated evaluation.
class IndexPredictor {
 public:
  IndexPredictor(const SurrogateIndexModel& model, const std::vector<std::string>& covariate_names)
      : model_(&model) {
    if (model.learners.size() != model.weights.size()) throw Error("model: learner/weight count mismatch");
    for (const auto& l : model.learners) {
      builders_.emplace_back(l.features, covariate_names);
      if (static_cast<std::size_t>(l.coefficients.size()) != builders_.back().columns())
        throw Error("model: coefficient count does not match feature map");
    }
    std::size_t width = 0;
    for (const auto& b : builders_) width = std::max(width, b.columns());
    row_.resize(width);
  }

  double operator()(const PatientRecord& r) const {
    double total = 0.0;
    for (std::size_t k = 0; k < builders_.size(); ++k) {
      const double w = model_->weights[k];
      if (w == 0.0 && builders_.size() > 1) continue;
      total += w * learner_prediction(k, r);
    }
    return total;
  }

  double learner_prediction(std::size_t k, const PatientRecord& r) const {
    const auto& b = builders_[k];
    b.row(r, row_.data());
    const auto& coef = model_->learners[k].coefficients;
    double eta = 0.0;
    for (std::size_t j = 0; j < b.columns(); ++j) eta += row_[j] * coef[static_cast<Eigen::Index>(j)];
    return model_->learners[k].family == Family::logistic ? expit(eta) : eta;
  }

 private:
  const SurrogateIndexModel* model_;
  std::vector<DesignBuilder> builders_;
  mutable std::vector<double> row_;
};

/// Evaluates g_N on one record.
inline double predict_index(const SurrogateIndexModel& model, const PatientRecord& record,
                            const std::vector<std::string>& covariate_names) {
  return IndexPredictor(model, covariate_names)(record);
}

/// Records usable for fitting: outcome observed and every referenced field present.
inline std::vector<PatientRecord> fitting_records(std::span<const TrialDataset* const> trials, bool needs_surrogate) {
  std::vector<PatientRecord> out;
  for (const auto* t : trials)
    for (const auto& r : t->records)
      if (r.outcome && (!needs_surrogate || r.surrogate)) out.push_back(r);
  return out;
}

/// Fits one learner on pooled records.
inline Learner fit_learner(const FeatureSpec& spec, Family family, std::span<const PatientRecord> records,
                           const std::vector<std::string>& covariate_names, const LogisticOptions& lopts = {},
                           LogisticFit* diagnostics = nullptr) {
  if (records.empty()) throw Error("fit_learner: no usable records");
  Learner l;
  l.family = family;
  l.features = resolve_knots(spec, records, covariate_names);
  DesignBuilder builder(l.features, covariate_names);
  const Eigen::MatrixXd x = builder.matrix(records);
  Eigen::VectorXd y(static_cast<Eigen::Index>(records.size())), w(y.size());
  for (std::size_t i = 0; i < records.size(); ++i) {
    y[static_cast<Eigen::Index>(i)] = *records[i].outcome;
    w[static_cast<Eigen::Index>(i)] = records[i].weight;
  }
  if (family == Family::linear) {
    l.coefficients = fit_wls(x, y, w);
  } else {
    auto fit = fit_logistic_irls(x, y, w, lopts);
    l.coefficients = fit.coefficients;
    if (diagnostics) *diagnostics = fit;
  }
  return l;
}

inline SurrogateIndexModel single_learner_model(Learner l) {
  SurrogateIndexModel m;
  m.kind = l.family == Family::linear ? ModelKind::linear : ModelKind::logistic;
  m.learners.push_back(std::move(l));
  m.weights = {1.0};
  return m;
}

/// Pooled single-learner fit across trials.
inline SurrogateIndexModel fit_index(const FeatureSpec& spec, Family family, const MetaDataset& trials,
                                     const LogisticOptions& lopts = {}) {
  if (trials.empty()) throw Error("fit_index: no trials");
  std::vector<const TrialDataset*> ptrs;
  for (const auto& t : trials) ptrs.push_back(&t);
  auto recs = fitting_records(ptrs, spec.uses_surrogate());
  return single_learner_model(fit_learner(spec, family, recs, trials.front().covariate_names, lopts));
}

enum class StackLoss { squared, binomial_loglik };

struct LearnerSpec {
  FeatureSpec features;
  Family family = Family::logistic;
  std::string name;
};

struct StackingConfig {
  std::vector<LearnerSpec> learners;
  StackLoss loss = StackLoss::binomial_loglik;
  int max_iter = 5000;
  double tolerance = 1e-8;
  double step = 1.0;  // initial mirror-descent step
  LogisticOptions logistic;
};

struct StackedFit {
  SurrogateIndexModel model;
  std::vector<std::string> trial_ids;
  std::vector<double> cv_loss_by_trial;            // ensemble CV loss per held-out trial
  std::vector<double> cv_loss_by_learner;          // per-learner CV loss (NaN if disqualified)
  double cv_loss = 0.0;                            // ensemble CV loss at the returned weights
  std::vector<std::vector<Eigen::VectorXd>> fold_coefficients;  // [trial][learner]
  std::vector<std::string> warnings;
  int iterations = 0;
};

namespace detail {

inline double stack_pointwise_loss(StackLoss loss, double y, double p) {
  if (loss == StackLoss::squared) return (y - p) * (y - p);
  constexpr double eps = 1e-12;
  p = std::clamp(p, eps, 1.0 - eps);
  return -(y * std::log(p) + (1.0 - y) * std::log1p(-p));
}

inline double stack_pointwise_grad(StackLoss loss, double y, double p) {
  if (loss == StackLoss::squared) return -2.0 * (y - p);
  constexpr double eps = 1e-12;
  p = std::clamp(p, eps, 1.0 - eps);
  return -y / p + (1.0 - y) / (1.0 - p);
}

/// Weighted mean loss of the convex combination P w.
inline double stack_loss(StackLoss loss, const Eigen::MatrixXd& p, const Eigen::VectorXd& y, const Eigen::VectorXd& obs_w,
                         const Eigen::VectorXd& w) {
  const Eigen::VectorXd pred = p * w;
  double s = 0.0;
  for (Eigen::Index i = 0; i < pred.size(); ++i) s += obs_w[i] * stack_pointwise_loss(loss, y[i], pred[i]);
  return s / obs_w.sum();
}

}  // namespace detail

struct SimplexSolution {
  Eigen::VectorXd weights;
  double loss = 0.0;
  int iterations = 0;
  bool converged = false;
};

/// Minimizes the CV loss of P w over the probability simplex by
/// exponentiated-gradient (entropic mirror descent) with backtracking.
/// Entries of `active` that are false are pinned at weight 0.
inline SimplexSolution solve_simplex_weights(StackLoss loss, const Eigen::MatrixXd& p, const Eigen::VectorXd& y,
                                             const Eigen::VectorXd& obs_w, const std::vector<bool>& active,
                                             int max_iter, double tol, double step) {
  const Eigen::Index k = p.cols();
  SimplexSolution sol;
  sol.weights = Eigen::VectorXd::Zero(k);
  const double n_active = static_cast<double>(std::count(active.begin(), active.end(), true));
  if (n_active == 0) throw Error("stacking: every learner was disqualified");
  for (Eigen::Index j = 0; j < k; ++j)
    if (active[static_cast<std::size_t>(j)]) sol.weights[j] = 1.0 / n_active;
  sol.loss = detail::stack_loss(loss, p, y, obs_w, sol.weights);
  if (n_active == 1) {
    sol.converged = true;
    return sol;
  }
  const double wsum = obs_w.sum();
  double eta = step;
  for (int it = 0; it < max_iter; ++it) {
    sol.iterations = it + 1;
    const Eigen::VectorXd pred = p * sol.weights;
    Eigen::VectorXd r(pred.size());
    for (Eigen::Index i = 0; i < pred.size(); ++i) r[i] = obs_w[i] * detail::stack_pointwise_grad(loss, y[i], pred[i]);
    const Eigen::VectorXd grad = p.transpose() * r / wsum;
    double gmin = std::numeric_limits<double>::infinity();
    for (Eigen::Index j = 0; j < k; ++j)
      if (active[static_cast<std::size_t>(j)]) gmin = std::min(gmin, grad[j]);
    // Frank-Wolfe gap bounds the suboptimality of a convex objective
    const double gap = sol.weights.dot(grad) - gmin;
    if (gap < tol) {
      sol.converged = true;
      break;
    }
    bool improved = false;
    for (int bt = 0; bt < 60; ++bt) {
      Eigen::VectorXd cand = Eigen::VectorXd::Zero(k);
      for (Eigen::Index j = 0; j < k; ++j)
        if (active[static_cast<std::size_t>(j)]) cand[j] = sol.weights[j] * std::exp(-eta * (grad[j] - gmin));
      cand /= cand.sum();
      const double l = detail::stack_loss(loss, p, y, obs_w, cand);
      if (l <= sol.loss) {
        const double change = (cand - sol.weights).cwiseAbs().maxCoeff();
        sol.weights = cand;
        sol.loss = l;
        eta *= 1.5;
        improved = true;
        if (change < tol * 1e-3) sol.converged = true;
        break;
      }
      eta *= 0.5;
    }
    if (!improved || sol.converged) {
      sol.converged = true;
      break;
    }
  }
  return sol;
}

/// Leave-one-trial-out stacked ensemble.
inline StackedFit fit_stacked(const StackingConfig& config, const MetaDataset& trials) {
  if (config.learners.empty()) throw Error("stacking: at least one learner required");
  if (!(config.tolerance > 0)) throw Error("stacking: tolerance must be positive");
  if (trials.size() < 2) throw Error("stacking: leave-one-trial-out needs at least 2 trials");
  const auto& names = trials.front().covariate_names;
  const std::size_t n_learn = config.learners.size();
  bool needs_s = false;
  for (const auto& l : config.learners) needs_s = needs_s || l.features.uses_surrogate();

  StackedFit out;
  std::vector<std::vector<PatientRecord>> held(trials.size());
  for (std::size_t t = 0; t < trials.size(); ++t) {
    out.trial_ids.push_back(trials[t].trial_id);
    const TrialDataset* one[] = {&trials[t]};
    held[t] = fitting_records(one, needs_s);
  }
  std::size_t total = 0;
  for (const auto& h : held) total += h.size();

  Eigen::MatrixXd cv(static_cast<Eigen::Index>(total), static_cast<Eigen::Index>(n_learn));
  Eigen::VectorXd y(static_cast<Eigen::Index>(total)), w(y.size());
  std::vector<std::size_t> trial_of(total);
  std::vector<bool> active(n_learn, true);
  out.fold_coefficients.assign(trials.size(), std::vector<Eigen::VectorXd>(n_learn));

  std::size_t offset = 0;
  for (std::size_t t = 0; t < trials.size(); ++t) {
    std::vector<const TrialDataset*> train;
    for (std::size_t u = 0; u < trials.size(); ++u)
      if (u != t) train.push_back(&trials[u]);
    const auto train_recs = fitting_records(train, needs_s);
    for (std::size_t k = 0; k < n_learn; ++k) {
      if (!active[k]) continue;
      try {
        auto l = fit_learner(config.learners[k].features, config.learners[k].family, train_recs, names, config.logistic);
        out.fold_coefficients[t][k] = l.coefficients;
        SurrogateIndexModel single = single_learner_model(std::move(l));
        IndexPredictor pred(single, names);
        for (std::size_t i = 0; i < held[t].size(); ++i)
          cv(static_cast<Eigen::Index>(offset + i), static_cast<Eigen::Index>(k)) = pred(held[t][i]);
      } catch (const Error& e) {
        active[k] = false;
        out.warnings.push_back("learner " + std::to_string(k) + " (" + config.learners[k].name +
                               ") disqualified on fold '" + trials[t].trial_id + "': " + e.what());
      }
    }
    for (std::size_t i = 0; i < held[t].size(); ++i) {
      y[static_cast<Eigen::Index>(offset + i)] = *held[t][i].outcome;
      w[static_cast<Eigen::Index>(offset + i)] = held[t][i].weight;
      trial_of[offset + i] = t;
    }
    offset += held[t].size();
  }
  for (std::size_t k = 0; k < n_learn; ++k)
    if (!active[k]) cv.col(static_cast<Eigen::Index>(k)).setZero();

  auto sol = solve_simplex_weights(config.loss, cv, y, w, active, config.max_iter, config.tolerance, config.step);
  out.cv_loss = sol.loss;
  out.iterations = sol.iterations;
  if (!sol.converged) out.warnings.push_back("simplex solver hit max_iter");

  out.cv_loss_by_learner.assign(n_learn, std::numeric_limits<double>::quiet_NaN());
  for (std::size_t k = 0; k < n_learn; ++k) {
    if (!active[k]) continue;
    Eigen::VectorXd e = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(n_learn));
    e[static_cast<Eigen::Index>(k)] = 1.0;
    out.cv_loss_by_learner[k] = detail::stack_loss(config.loss, cv, y, w, e);
  }
  out.cv_loss_by_trial.assign(trials.size(), 0.0);
  {
    const Eigen::VectorXd pred = cv * sol.weights;
    std::vector<double> wsum(trials.size(), 0.0);
    for (std::size_t i = 0; i < total; ++i) {
      const auto ii = static_cast<Eigen::Index>(i);
      out.cv_loss_by_trial[trial_of[i]] += w[ii] * detail::stack_pointwise_loss(config.loss, y[ii], pred[ii]);
      wsum[trial_of[i]] += w[ii];
    }
    for (std::size_t t = 0; t < trials.size(); ++t)
      out.cv_loss_by_trial[t] = wsum[t] > 0 ? out.cv_loss_by_trial[t] / wsum[t] : 0.0;
  }

  std::vector<const TrialDataset*> all;
  for (const auto& t : trials) all.push_back(&t);
  const auto all_recs = fitting_records(all, needs_s);
  out.model.kind = ModelKind::ensemble;
  for (std::size_t k = 0; k < n_learn; ++k) {
    Learner l;
    l.family = config.learners[k].family;
    l.features = config.learners[k].features;
    if (active[k]) {
      try {
        l = fit_learner(config.learners[k].features, config.learners[k].family, all_recs, names, config.logistic);
      } catch (const Error& e) {
        active[k] = false;
        out.warnings.push_back("learner " + std::to_string(k) + " failed on full refit: " + e.what());
      }
    }
    if (!active[k]) {
      l.features = resolve_knots(l.features, all_recs, names);
      l.coefficients = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(l.features.columns()));
    }
    out.model.learners.push_back(std::move(l));
  }
  out.model.weights.assign(sol.weights.data(), sol.weights.data() + sol.weights.size());
  double s = 0.0;
  for (std::size_t k = 0; k < n_learn; ++k) {
    if (!active[k]) out.model.weights[k] = 0.0;
    s += out.model.weights[k];
  }
  for (auto& v : out.model.weights) v /= s;
  return out;
}

// ---------------------------------------------------------------------------
// Serialization

inline std::string format_real(double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

inline double parse_real(const std::string& s) {
  if (s == "NA") return std::numeric_limits<double>::quiet_NaN();
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (end == s.c_str() || *end != '\0') throw Error("not a real number: '" + s + "'");
  return v;
}

inline constexpr const char* kModelHeader = "# surrometa-model v1";

inline void write_model(std::ostream& os, const SurrogateIndexModel& m) {
  os << kModelHeader << "\n";
  os << "kind " << to_string(m.kind) << "\n";
  os << "learners " << m.learners.size() << "\n";
  for (std::size_t k = 0; k < m.learners.size(); ++k) {
    const auto& l = m.learners[k];
    os << "learner " << to_string(l.family) << " weight " << format_real(m.weights[k]) << "\n";
    for (const auto& t : l.features.terms) {
      switch (t.kind) {
        case Term::Kind::intercept: os << "term intercept\n"; break;
        case Term::Kind::raw: os << "term raw " << t.a << "\n"; break;
        case Term::Kind::interaction: os << "term interaction " << t.a << " " << t.b << "\n"; break;
        case Term::Kind::square: os << "term square " << t.a << "\n"; break;
        case Term::Kind::bspline:
          os << "term bspline " << t.a << " " << t.df << " " << t.degree << " " << (t.basis_intercept ? 1 : 0) << " "
             << format_real(t.lower) << " " << format_real(t.upper) << " " << t.knots.size();
          for (double k2 : t.knots) os << " " << format_real(k2);
          os << "\n";
          break;
      }
    }
    os << "coefficients " << l.coefficients.size();
    for (Eigen::Index j = 0; j < l.coefficients.size(); ++j) os << " " << format_real(l.coefficients[j]);
    os << "\n";
  }
  os << "end\n";
}

inline SurrogateIndexModel read_model(std::istream& is) {
  std::string line;
  if (!std::getline(is, line) || line != kModelHeader) throw Error("model file: missing or mismatched version header");
  SurrogateIndexModel m;
  auto next = [&]() -> std::istringstream {
    if (!std::getline(is, line)) throw Error("model file: unexpected end");
    return std::istringstream(line);
  };
  std::string key, val;
  {
    auto ss = next();
    ss >> key >> val;
    if (key != "kind") throw Error("model file: expected kind");
    if (val == "linear") m.kind = ModelKind::linear;
    else if (val == "logistic") m.kind = ModelKind::logistic;
    else if (val == "ensemble") m.kind = ModelKind::ensemble;
    else throw Error("model file: unknown kind " + val);
  }
  std::size_t n = 0;
  {
    auto ss = next();
    ss >> key >> n;
    if (key != "learners") throw Error("model file: expected learners");
  }
  for (std::size_t k = 0; k < n; ++k) {
    Learner l;
    {
      auto ss = next();
      std::string fam, wkey, wval;
      ss >> key >> fam >> wkey >> wval;
      if (key != "learner" || wkey != "weight") throw Error("model file: malformed learner line");
      l.family = fam == "logistic" ? Family::logistic : Family::linear;
      m.weights.push_back(parse_real(wval));
    }
    while (true) {
      auto ss = next();
      ss >> key;
      if (key == "coefficients") {
        std::size_t c = 0;
        ss >> c;
        l.coefficients.resize(static_cast<Eigen::Index>(c));
        for (std::size_t j = 0; j < c; ++j) {
          ss >> val;
          l.coefficients[static_cast<Eigen::Index>(j)] = parse_real(val);
        }
        break;
      }
      if (key != "term") throw Error("model file: unexpected line '" + line + "'");
      std::string kind;
      ss >> kind;
      Term t;
      if (kind == "intercept") {
        t = Term::intercept();
      } else if (kind == "raw") {
        ss >> t.a;
        t.kind = Term::Kind::raw;
      } else if (kind == "interaction") {
        ss >> t.a >> t.b;
        t.kind = Term::Kind::interaction;
      } else if (kind == "square") {
        ss >> t.a;
        t.kind = Term::Kind::square;
      } else if (kind == "bspline") {
        int icpt = 1;
        std::size_t nk = 0;
        std::string lo, hi;
        t.kind = Term::Kind::bspline;
        ss >> t.a >> t.df >> t.degree >> icpt >> lo >> hi >> nk;
        t.basis_intercept = icpt != 0;
        t.lower = parse_real(lo);
        t.upper = parse_real(hi);
        for (std::size_t j = 0; j < nk; ++j) {
          ss >> val;
          t.knots.push_back(parse_real(val));
        }
        t.resolved = true;
      } else {
        throw Error("model file: unknown term " + kind);
      }
      if (!ss) throw Error("model file: malformed term line '" + line + "'");
      l.features.terms.push_back(std::move(t));
    }
    m.learners.push_back(std::move(l));
  }
  {
    auto ss = next();
    ss >> key;
    if (key != "end") throw Error("model file: expected end");
  }
  return m;
}

}  // namespace surrometa
