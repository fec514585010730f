// Adjusting reference-strain neutralization titers to the circulating strain
// mix: s_adj = s_ref * sum_v pi_v / c_v, with c_v the GMT ratio of the
// reference strain to strain v.

#pragma once

#include "surrometa/core.hpp"

#include <cmath>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace surrometa {

inline const std::string kReferenceStrain = "Ref";

class GmtTable {
 public:
  void add(const std::string& trial, const std::string& strain, double c) {
    if (!(c > 0.0) || !std::isfinite(c)) throw Error("gmt table: coefficient for " + trial + "/" + strain + " must be positive");
    if (strain == kReferenceStrain && c != 1.0) throw Error("gmt table: reference coefficient must be exactly 1");
    auto& row = rows_[trial];
    if (!row.emplace(strain, c).second) throw Error("gmt table: duplicate entry " + trial + "/" + strain);
  }

  bool has_trial(const std::string& trial) const { return rows_.count(trial) > 0; }

  std::optional<double> coefficient(const std::string& trial, const std::string& strain) const {
    auto t = rows_.find(trial);
    if (t == rows_.end()) return std::nullopt;
    if (strain == kReferenceStrain) return 1.0;
    auto s = t->second.find(strain);
    if (s == t->second.end()) return std::nullopt;
    return s->second;
  }

  const std::map<std::string, std::map<std::string, double>>& rows() const { return rows_; }

 private:
  std::map<std::string, std::map<std::string, double>> rows_;
};

struct StrainMix {
  std::vector<std::pair<std::string, double>> weights;

  double total() const {
    double s = 0.0;
    for (const auto& [_, w] : weights) s += w;
    return s;
  }

  void validate() const {
    for (const auto& [strain, w] : weights)
      if (!(w >= 0.0) || !std::isfinite(w)) throw Error("strain mix: weight for " + strain + " must be nonnegative");
    if (total() > 1.0 + 1e-12) throw Error("strain mix: weights sum above 1");
  }
};

/// sum_v pi_v / c_v. Every strain with positive weight must have a
/// coefficient for the trial.
inline double adjustment_factor(const StrainMix& mix, const GmtTable& table, const std::string& trial) {
  mix.validate();
  if (!table.has_trial(trial)) throw Error("gmt table: no row for trial '" + trial + "'");
  double f = 0.0;
  for (const auto& [strain, w] : mix.weights) {
    if (w == 0.0) continue;
    const auto c = table.coefficient(trial, strain);
    if (!c) throw Error("gmt table: strain '" + strain + "' has weight but no coefficient for trial '" + trial + "'");
    f += w / *c;
  }
  return f;
}

/// Zeroes the weights of strains without a coefficient for the trial.
inline StrainMix drop_unavailable_strains(StrainMix mix, const GmtTable& table, const std::string& trial) {
  for (auto& [strain, w] : mix.weights)
    if (!table.coefficient(trial, strain)) w = 0.0;
  return mix;
}

inline double adjust_titer(double s_ref, double factor) {
  if (!(s_ref > 0.0) || !std::isfinite(s_ref)) throw Error("adjust_titer: titer must be positive");
  if (!(factor >= 0.0) || !std::isfinite(factor)) throw Error("adjust_titer: factor must be nonnegative");
  return s_ref * factor;
}

/// Adjusted titer for one subject after dropping unavailable strains; empty
/// when no usable weight remains.
inline std::optional<double> adjust_subject_titer(double s_ref, const StrainMix& mix, const GmtTable& table,
                                                  const std::string& trial) {
  const auto usable = drop_unavailable_strains(mix, table, trial);
  if (!(usable.total() > 0.0)) return std::nullopt;
  return adjust_titer(s_ref, adjustment_factor(usable, table, trial));
}

/// GMT ratios (reference to circulating strain) for the vaccine trials.
inline GmtTable published_gmt_table() {
  GmtTable t;
  const std::vector<std::pair<std::string, std::vector<std::pair<std::string, double>>>> rows = {
      {"Moderna", {{"Epsilon", 2.1}, {"Gamma", 3.2}, {"Zeta", 3.2}}},
      {"AstraZeneca", {{"Epsilon", 1.55}, {"Gamma", 3.4}, {"Alpha", 0.9}, {"Delta", 1.55}, {"Lambda", 1.55}}},
      {"Janssen",
       {{"Epsilon", 1.55},
        {"Gamma", 3.4},
        {"Zeta", 2.2},
        {"Alpha", 0.9},
        {"Delta", 1.55},
        {"Lambda", 1.55},
        {"Iota", 0.9},
        {"Beta", 3.6},
        {"Mu", 3.6}}},
      {"Novavax", {{"Epsilon", 2.1}, {"Gamma", 3.2}, {"Alpha", 1.2}, {"Iota", 2.3}, {"Beta", 7.4}}},
      {"Sanofi 1 Naive", {{"Delta", 2}, {"Omicron", 4.2}, {"BA.1", 4.9}, {"BA.2", 3.3}, {"BA.4.5", 4}}},
      {"Sanofi 1 Non-Naive Vaccine", {{"Delta", 0.59}, {"Omicron", 4.7}, {"BA.1", 7.3}, {"BA.2", 4.3}, {"BA.4.5", 6.5}}},
      {"Sanofi 1 Non-Naive Placebo", {{"Delta", 0.43}, {"Omicron", 5.2}, {"BA.1", 11.8}, {"BA.2", 9.1}, {"BA.4.5", 11.4}}},
      {"Sanofi 2 Naive", {{"Delta", 1.4}, {"Omicron", 3.3}, {"BA.1", 6.3}, {"BA.2", 5.8}, {"BA.4.5", 9.1}}},
      {"Sanofi 2 Non-Naive Vaccine", {{"Delta", 1.1}, {"Omicron", 4}, {"BA.1", 7.7}, {"BA.2", 5.2}, {"BA.4.5", 6.6}}},
      {"Sanofi 2 Non-Naive Placebo", {{"Delta", 1.1}, {"Omicron", 4.4}, {"BA.1", 4.6}, {"BA.2", 3.7}, {"BA.4.5", 4.3}}},
  };
  for (const auto& [trial, entries] : rows) {
    t.add(trial, kReferenceStrain, 1.0);
    for (const auto& [strain, c] : entries) t.add(trial, strain, c);
  }
  return t;
}

}  // namespace surrometa
