// Declarative feature maps: term lists turned into design matrices.

#pragma once

#include "surrometa/core.hpp"
#include "surrometa/stats.hpp"

#include <Eigen/Dense>

#include <span>
#include <string>
#include <vector>

namespace surrometa {

/// Name that refers to the surrogate value rather than a covariate.
inline constexpr const char* kSurrogateField = "surrogate";

struct Term {
  enum class Kind { intercept, raw, interaction, square, bspline };
  Kind kind = Kind::intercept;
  std::string a;
  std::string b;
  // bspline only
  int df = 0;
  int degree = 3;
  bool basis_intercept = true;  // false drops the first basis column
  std::vector<double> knots;    // interior knots; fixed once resolved
  double lower = 0.0;
  double upper = 0.0;
  bool resolved = false;

  static Term intercept() { return {}; }
  static Term raw(std::string name) { return {Kind::raw, std::move(name)}; }
  static Term interaction(std::string x, std::string y) { return {Kind::interaction, std::move(x), std::move(y)}; }
  static Term square(std::string name) { return {Kind::square, std::move(name)}; }
  static Term bspline(std::string name, int df, int degree = 3, bool with_intercept = true) {
    Term t{Kind::bspline, std::move(name)};
    t.df = df;
    t.degree = degree;
    t.basis_intercept = with_intercept;
    return t;
  }

  int interior_knot_count() const { return basis_intercept ? df - degree - 1 : df - degree; }

  std::size_t columns() const { return kind == Kind::bspline ? static_cast<std::size_t>(df) : 1; }

  friend bool operator==(const Term&, const Term&) = default;
};

struct FeatureSpec {
  std::vector<Term> terms;

  std::size_t columns() const {
    std::size_t c = 0;
    for (const auto& t : terms) c += t.columns();
    return c;
  }
  bool resolved() const {
    for (const auto& t : terms)
      if (t.kind == Term::Kind::bspline && !t.resolved) return false;
    return true;
  }
  /// Field names referenced by any term.
  std::vector<std::string> fields() const {
    std::vector<std::string> out;
    auto push = [&](const std::string& s) {
      if (!s.empty() && std::find(out.begin(), out.end(), s) == out.end()) out.push_back(s);
    };
    for (const auto& t : terms) {
      push(t.a);
      push(t.b);
    }
    return out;
  }
  bool uses_surrogate() const {
    auto f = fields();
    return std::find(f.begin(), f.end(), kSurrogateField) != f.end();
  }

  friend bool operator==(const FeatureSpec&, const FeatureSpec&) = default;
};

/// Resolved reference into a record: covariate column, or -1 for surrogate.
struct FieldRef {
  long column = -1;
  std::string name;
};

inline FieldRef resolve_field(const std::string& name, const std::vector<std::string>& covariate_names) {
  if (name == kSurrogateField) return {-1, name};
  auto it = std::find(covariate_names.begin(), covariate_names.end(), name);
  if (it == covariate_names.end()) throw Error("unresolved feature name '" + name + "'");
  return {static_cast<long>(it - covariate_names.begin()), name};
}

inline double field_value(const PatientRecord& r, const FieldRef& f) {
  if (f.column >= 0) return r.covariates[static_cast<std::size_t>(f.column)];
  if (!r.surrogate) throw Error("missing value in referenced field '" + f.name + "'");
  return *r.surrogate;
}

/// Nonzero-span B-spline basis at x (all df+(!intercept) functions of the
/// full basis). x is clamped to [lower, upper].
inline std::vector<double> bspline_basis(double x, const Term& t) {
  const int p = t.degree;
  std::vector<double> knots;
  knots.reserve(t.knots.size() + 2 * (p + 1));
  for (int i = 0; i <= p; ++i) knots.push_back(t.lower);
  knots.insert(knots.end(), t.knots.begin(), t.knots.end());
  for (int i = 0; i <= p; ++i) knots.push_back(t.upper);
  const int nbasis = static_cast<int>(knots.size()) - p - 1;
  std::vector<double> out(static_cast<std::size_t>(nbasis), 0.0);

  x = std::clamp(x, t.lower, t.upper);
  // span k with knots[k] <= x < knots[k+1]; right boundary maps to the last span
  int k = p;
  const int last = nbasis - 1;
  if (x >= t.upper) {
    k = last;
  } else {
    while (k < last && knots[static_cast<std::size_t>(k + 1)] <= x) ++k;
  }
  std::vector<double> n(static_cast<std::size_t>(p + 1), 0.0), left(n.size()), right(n.size());
  n[0] = 1.0;
  for (int j = 1; j <= p; ++j) {
    left[j] = x - knots[static_cast<std::size_t>(k + 1 - j)];
    right[j] = knots[static_cast<std::size_t>(k + j)] - x;
    double saved = 0.0;
    for (int r = 0; r < j; ++r) {
      const double denom = right[r + 1] + left[j - r];
      const double temp = denom == 0.0 ? 0.0 : n[r] / denom;
      n[r] = saved + right[r + 1] * temp;
      saved = left[j - r] * temp;
    }
    n[j] = saved;
  }
  for (int r = 0; r <= p; ++r) out[static_cast<std::size_t>(k - p + r)] = n[static_cast<std::size_t>(r)];
  return out;
}

/// Fills in boundary and quantile-placed interior knots for every
/// unresolved bspline term, using the supplied records.
inline FeatureSpec resolve_knots(FeatureSpec spec, std::span<const PatientRecord> records,
                                 const std::vector<std::string>& covariate_names) {
  for (auto& t : spec.terms) {
    if (t.kind != Term::Kind::bspline || t.resolved) continue;
    if (t.degree < 1 || t.interior_knot_count() < 0)
      throw Error("bspline term on '" + t.a + "' needs df >= degree + 1");
    auto f = resolve_field(t.a, covariate_names);
    std::vector<double> xs;
    xs.reserve(records.size());
    for (const auto& r : records) xs.push_back(field_value(r, f));
    if (xs.empty()) throw Error("cannot place knots without records");
    std::sort(xs.begin(), xs.end());
    t.lower = xs.front();
    t.upper = xs.back();
    const int k = t.interior_knot_count();
    t.knots.clear();
    for (int i = 1; i <= k; ++i) t.knots.push_back(quantile_sorted(xs, static_cast<double>(i) / (k + 1)));
    t.resolved = true;
  }
  return spec;
}

/// Evaluates a resolved spec on one record into `row` (length spec.columns()).
inline void fill_design_row(const FeatureSpec& spec, const std::vector<FieldRef>& a_refs,
                            const std::vector<FieldRef>& b_refs, const PatientRecord& r, double* row) {
  std::size_t c = 0;
  for (std::size_t i = 0; i < spec.terms.size(); ++i) {
    const auto& t = spec.terms[i];
    switch (t.kind) {
      case Term::Kind::intercept:
        row[c++] = 1.0;
        break;
      case Term::Kind::raw:
        row[c++] = field_value(r, a_refs[i]);
        break;
      case Term::Kind::interaction:
        row[c++] = field_value(r, a_refs[i]) * field_value(r, b_refs[i]);
        break;
      case Term::Kind::square: {
        const double v = field_value(r, a_refs[i]);
        row[c++] = v * v;
        break;
      }
      case Term::Kind::bspline: {
        auto basis = bspline_basis(field_value(r, a_refs[i]), t);
        const std::size_t skip = t.basis_intercept ? 0 : 1;
        for (std::size_t j = skip; j < basis.size(); ++j) row[c++] = basis[j];
        break;
      }
    }
  }
}

/// Compiled spec bound to a covariate layout; reusable across records.
class DesignBuilder {
 public:
  DesignBuilder(FeatureSpec spec, const std::vector<std::string>& covariate_names) : spec_(std::move(spec)) {
    if (!spec_.resolved()) throw Error("feature spec has unresolved spline knots");
    for (const auto& t : spec_.terms) {
      a_.push_back(t.a.empty() ? FieldRef{} : resolve_field(t.a, covariate_names));
      b_.push_back(t.b.empty() ? FieldRef{} : resolve_field(t.b, covariate_names));
    }
  }

  std::size_t columns() const { return spec_.columns(); }
  const FeatureSpec& spec() const { return spec_; }

  void row(const PatientRecord& r, double* out) const { fill_design_row(spec_, a_, b_, r, out); }

  Eigen::RowVectorXd row(const PatientRecord& r) const {
    Eigen::RowVectorXd out(static_cast<Eigen::Index>(columns()));
    row(r, out.data());
    return out;
  }

  template <class Records>
  Eigen::MatrixXd matrix(const Records& records) const {
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> m(
        static_cast<Eigen::Index>(std::size(records)), static_cast<Eigen::Index>(columns()));
    Eigen::Index i = 0;
    for (const auto& r : records) row(deref(r), m.row(i++).data());
    return m;
  }

 private:
  static const PatientRecord& deref(const PatientRecord& r) { return r; }
  static const PatientRecord& deref(const PatientRecord* r) { return *r; }

  FeatureSpec spec_;
  std::vector<FieldRef> a_, b_;
};

/// One row per record, columns in term order. Unresolved spline knots are
/// placed from these same records.
inline Eigen::MatrixXd build_design(const FeatureSpec& spec, std::span<const PatientRecord> records,
                                    const std::vector<std::string>& covariate_names) {
  DesignBuilder builder(resolve_knots(spec, records, covariate_names), covariate_names);
  return builder.matrix(records);
}

}  // namespace surrometa
