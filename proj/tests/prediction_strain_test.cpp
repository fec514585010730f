#include "support.hpp"
#include "surrometa/prediction.hpp"
#include "surrometa/strain_adjust.hpp"

#include <catch_amalgamated.hpp>

using namespace surrometa;
using namespace surrometa::testing;
using Catch::Approx;

namespace {

ThetaEstimate theta(double ma, double mb, double da, double db, double rho) {
  ThetaEstimate t;
  t.mu_alpha = ma;
  t.mu_beta = mb;
  t.d_alpha = da;
  t.d_beta = db;
  t.rho = rho;
  t.d_alpha_beta = rho * std::sqrt(da * db);
  return t;
}

StrainMix mix(std::vector<std::pair<std::string, double>> w) { return StrainMix{std::move(w)}; }

}  // namespace

TEST_CASE("index error variance", "[prediction]") {
  const std::vector<TrialSummary> same = {summary(1, 1), summary(2, 2), summary(-1, -1)};
  CHECK(sigma2_index_error(same).raw == 0.0);

  const std::vector<TrialSummary> s = {summary(1, 1.1), summary(2, 1.9), summary(0, 0.2)};
  const auto e = sigma2_index_error(s);
  CHECK(e.raw == Approx(0.02).margin(1e-15));
  CHECK_FALSE(e.negative);

  const std::vector<TrialSummary> noisy = {summary(1, 1.1, 1.0, 1.0), summary(2, 1.9, 1.0, 1.0)};
  const auto n = sigma2_index_error(noisy);
  CHECK(n.negative);
  CHECK(n.raw < 0.0);
  CHECK(n.floored == 0.0);
  CHECK_THROWS_AS(sigma2_index_error(std::vector<TrialSummary>{summary(0, 0)}), Error);
}

TEST_CASE("prediction interval examples", "[prediction]") {
  const auto d = prediction_interval({"new", 0.7, 0.0}, 0.0, 0.95);
  CHECK(d.lower == 0.7);
  CHECK(d.upper == 0.7);

  const auto ci = prediction_interval({"new", -1.0, 0.04}, 0.05, 0.95);
  CHECK(ci.lower == Approx(-1.588).margin(1e-3));
  CHECK(ci.upper == Approx(-0.412).margin(1e-3));
  CHECK(ci.lower == Approx(-1.0 - 1.959963984540054 * 0.3).epsilon(1e-14));

  const auto wide = prediction_interval({"new", -1.0, 0.04}, 0.05, 0.99);
  CHECK(wide.lower <= ci.lower);
  CHECK(wide.upper >= ci.upper);
  CHECK_THROWS_AS(prediction_interval({"new", 0, 0}, -0.1, 0.95), Error);
}

TEST_CASE("prediction interval width is monotone", "[prediction][property]") {
  double prev = 0.0;
  for (double s2 : {0.0, 0.01, 0.1, 1.0}) {
    const auto ci = prediction_interval({"n", 0.3, 0.02}, s2, 0.9);
    CHECK(ci.upper - ci.lower >= prev);
    prev = ci.upper - ci.lower;
  }
  prev = 0.0;
  for (double v0 : {0.0, 0.01, 0.1, 1.0}) {
    const auto ci = prediction_interval({"n", 0.3, v0}, 0.05, 0.9);
    CHECK(ci.upper - ci.lower >= prev);
    prev = ci.upper - ci.lower;
  }
}

TEST_CASE("empirical Bayes prediction examples", "[prediction]") {
  const auto none = eb_prediction(theta(1, 2, 3, 4, 0.0), {"n", 5.0, 0.3}, 0.95);
  CHECK(none.point == 2.0);
  CHECK(none.variance == 4.0);

  const auto p = eb_prediction(theta(0, 0, 1, 1, 0.8), {"n", 1.0, 1.0}, 0.95);
  CHECK(p.point == Approx(0.4).epsilon(1e-14));
  CHECK(p.variance == Approx(0.68).epsilon(1e-14));

  const auto far = eb_prediction(theta(0, 0.5, 1, 1, 0.8), {"n", 1.0, 1e12}, 0.95);
  CHECK(far.point == Approx(0.5).margin(1e-10));

  CHECK_THROWS_AS(eb_prediction(theta(0, 0, 0, 1, 0.5), {"n", 1.0, 0.0}, 0.95), Error);
  ThetaEstimate undef = theta(0, 0, 1, 1, 0);
  undef.rho.reset();
  CHECK_THROWS_AS(eb_prediction(undef, {"n", 1.0, 0.1}, 0.95), Error);
}

TEST_CASE("plug-in prediction examples", "[prediction]") {
  const auto perfect = plugin_prediction(theta(1, 2, 2, 2, 1.0), {"n", 3.0, 0.1}, 0.95);
  CHECK(perfect.point == Approx(4.0).epsilon(1e-14));
  CHECK(perfect.variance == 0.0);
  CHECK(perfect.interval.lower == perfect.interval.upper);

  const auto zero = plugin_prediction(theta(1, 2, 4, 1, 0.0), {"n", 3.0, 0.1}, 0.95);
  CHECK(zero.point == 2.0);
  CHECK(zero.variance == 1.0);

  const auto p = plugin_prediction(theta(1, 2, 4, 1, 0.5), {"n", 3.0, 0.1}, 0.95);
  CHECK(p.point == Approx(2.5).epsilon(1e-14));
  CHECK(p.variance == Approx(0.75).epsilon(1e-14));

  CHECK_THROWS_AS(plugin_prediction(theta(1, 2, 0, 1, 0.5), {"n", 3.0, 0.1}, 0.95), Error);
}

TEST_CASE("EB shrinks at least as much as the plug-in", "[prediction][property]") {
  Rng rng(4, {static_cast<std::uint64_t>(Stream::fixture)});
  for (int i = 0; i < 500; ++i) {
    const auto t = theta(rng.normal(), rng.normal(), rng.uniform(0.01, 3), rng.uniform(0.01, 3), rng.uniform(-1, 1));
    const NewTrialEffect nt{"n", rng.normal() * 2, rng.uniform(1e-4, 2)};
    const auto eb = eb_prediction(t, nt, 0.95);
    const auto pi = plugin_prediction(t, nt, 0.95);
    CHECK(std::abs(eb.point - t.mu_beta) <= std::abs(pi.point - t.mu_beta) + 1e-12);
    for (const auto& p : {eb, pi}) {
      CHECK(p.interval.lower <= p.point);
      CHECK(p.point <= p.interval.upper);
    }
  }
}

TEST_CASE("adjustment factor examples", "[strain]") {
  const auto table = published_gmt_table();
  CHECK(adjustment_factor(mix({{"Ref", 1.0}}), table, "Moderna") == 1.0);
  const double f = adjustment_factor(mix({{"Epsilon", 0.5}, {"Gamma", 0.5}}), table, "Moderna");
  CHECK(std::abs(f - (0.5 / 2.1 + 0.5 / 3.2)) < 1e-15);
  CHECK(std::abs(f - 0.394345238095238) < 1e-12);
  CHECK(adjustment_factor(mix({{"Epsilon", 0.0}, {"Gamma", 0.0}}), table, "Moderna") == 0.0);

  CHECK_THROWS_AS(adjustment_factor(mix({{"Beta", 0.5}}), table, "Moderna"), Error);
  CHECK_THROWS_AS(adjustment_factor(mix({{"Ref", 1.0}}), table, "Pfizer"), Error);
  CHECK_THROWS_AS(adjustment_factor(mix({{"Ref", 0.7}, {"Gamma", 0.7}}), table, "Moderna"), Error);
}

TEST_CASE("titer adjustment examples", "[strain]") {
  const auto table = published_gmt_table();
  const double f = adjustment_factor(mix({{"Epsilon", 0.5}, {"Gamma", 0.5}}), table, "Moderna");
  CHECK(std::abs(adjust_titer(100.0, f) - 39.434523809523810) < 1e-12);
  CHECK(adjust_titer(250.0, 1.0) == 250.0);
  GmtTable t;
  t.add("T", "Ref", 1.0);
  t.add("T", "V", 2.0);
  CHECK(adjust_titer(80.0, adjustment_factor(mix({{"V", 1.0}}), t, "T")) == 40.0);
  CHECK_THROWS_AS(adjust_titer(0.0, 1.0), Error);
  CHECK_THROWS_AS(t.add("T", "Ref", 2.0), Error);
  CHECK_THROWS_AS(t.add("T", "W", 0.0), Error);
  CHECK_THROWS_AS(t.add("T", "V", 3.0), Error);
}

TEST_CASE("unavailable strains are dropped and empty mixes stay missing", "[strain]") {
  const auto table = published_gmt_table();
  const auto partial = adjust_subject_titer(100.0, mix({{"Epsilon", 0.5}, {"Beta", 0.5}}), table, "Moderna");
  REQUIRE(partial);
  CHECK(*partial == Approx(100.0 * 0.5 / 2.1).epsilon(1e-15));
  CHECK_FALSE(adjust_subject_titer(100.0, mix({{"Beta", 1.0}}), table, "Moderna"));
  CHECK_FALSE(adjust_subject_titer(100.0, mix({}), table, "Moderna"));
}

TEST_CASE("strain adjustment invariants", "[strain][property]") {
  Rng rng(6, {static_cast<std::uint64_t>(Stream::fixture)});
  for (int i = 0; i < 300; ++i) {
    GmtTable t;
    t.add("T", "Ref", 1.0);
    std::vector<double> c;
    StrainMix m;
    double left = 1.0;
    for (int v = 0; v < 4; ++v) {
      c.push_back(rng.uniform(0.3, 8.0));
      t.add("T", "v" + std::to_string(v), c.back());
      const double w = v == 3 ? left : left * rng.uniform();
      left -= w;
      m.weights.emplace_back("v" + std::to_string(v), w);
    }
    const double f = adjustment_factor(m, t, "T");
    const double s = rng.uniform(1.0, 1000.0), a = rng.uniform(0.1, 10.0);
    CHECK(adjust_titer(a * s, f) == Approx(a * adjust_titer(s, f)).epsilon(1e-14));
    const double lo = 1.0 / *std::max_element(c.begin(), c.end());
    const double hi = 1.0 / *std::min_element(c.begin(), c.end());
    CHECK(f >= lo * (1 - 1e-12));
    CHECK(f <= hi * (1 + 1e-12));

    GmtTable bigger;
    bigger.add("T", "Ref", 1.0);
    for (int v = 0; v < 4; ++v) bigger.add("T", "v" + std::to_string(v), v == 1 ? c[1] * 1.5 : c[static_cast<std::size_t>(v)]);
    CHECK(adjustment_factor(m, bigger, "T") <= f);
  }
}

TEST_CASE("published table shape", "[strain]") {
  const auto t = published_gmt_table();
  CHECK(t.rows().size() == 10);
  CHECK(*t.coefficient("Novavax", "Beta") == 7.4);
  CHECK(*t.coefficient("Sanofi 1 Non-Naive Placebo", "BA.1") == 11.8);
  CHECK(*t.coefficient("Janssen", "Ref") == 1.0);
  CHECK_FALSE(t.coefficient("AstraZeneca", "Zeta"));
}
