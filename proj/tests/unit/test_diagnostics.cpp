#include <cmath>
#include <numeric>
#include <random>

#include "doctest.h"
#include "semisub/diagnostics.hpp"
#include "../support/oracles.hpp"

using namespace semisub;

TEST_CASE("lppd of a hand-computed two point case") {
  Matrix ll(2, 2);
  ll << std::log(0.2), std::log(0.4), std::log(0.6), std::log(0.1);
  const LppdResult r = lppd_from_loglik(ll);
  const double a = std::log(0.4), b = std::log(0.25);
  CHECK(r.pointwise[0] == doctest::Approx(a).epsilon(1e-14));
  CHECK(r.pointwise[1] == doctest::Approx(b).epsilon(1e-14));
  CHECK(r.lppd == doctest::Approx((a + b) / 2));
  CHECK(r.se == doctest::Approx(std::abs(a - b) / std::sqrt(2.0) / std::sqrt(2.0)));
  // duplicating every draw changes nothing
  Matrix twice(4, 2);
  twice << ll, ll;
  CHECK(lppd_from_loglik(twice).lppd == doctest::Approx(r.lppd).epsilon(1e-14));
  // large magnitudes stay finite
  CHECK(std::isfinite(pointwise_lppd(Matrix::Constant(3, 1, -2000.0))[0]));
  CHECK_THROWS(lppd_from_loglik(Matrix(0, 3)));
}

TEST_CASE("wilson interval") {
  const auto [lo, hi] = wilson_interval(25, 50);
  CHECK(std::abs(lo - 0.366) <= 0.001);
  CHECK(std::abs(hi - 0.634) <= 0.001);
  const auto [l0, h0] = wilson_interval(0, 10);
  CHECK(l0 == 0.0);
  CHECK(h0 > 0.0);
  CHECK_THROWS(wilson_interval(3, 0));
  CHECK_THROWS(wilson_interval(5, 4));
}

TEST_CASE("type 7 quantiles and equal-tailed intervals") {
  Vector v(100);
  std::iota(v.data(), v.data() + 100, 1.0);
  const auto [lo, hi] = credible_interval(v, 0.5);
  CHECK(lo == 25.75);
  CHECK(hi == 75.25);
  CHECK(quantile({3.0, 1.0, 2.0}, 0.5) == 2.0);
  CHECK(quantile({1.0, 2.0}, 1.0) == 2.0);
  CHECK_THROWS(credible_interval(Vector::Constant(1, 1.0), 0.5));
  CHECK_THROWS(credible_interval(v, 1.0));
  CHECK_THROWS(credible_interval(v, 0.0));
}

TEST_CASE("auc with midranks") {
  CHECK(auc({0, 0, 1, 1}, {0.1, 0.4, 0.35, 0.8}) == 0.75);
  CHECK(auc({0, 1}, {0.5, 0.5}) == 0.5);
  CHECK(auc({1, 0, 1}, {0.9, 0.1, 0.8}) == 1.0);
  CHECK_THROWS(auc({1, 1}, {0.1, 0.2}));
  CHECK_THROWS(auc({0, 2}, {0.1, 0.2}));
}

TEST_CASE("hdi") {
  Vector v(5);
  v << 0.0, 1.0, 1.1, 1.2, 5.0;
  const auto [lo, hi] = hdi(v, 0.6);  // window of 3 order statistics
  CHECK(lo == 1.0);
  CHECK(hi == 1.2);
  CHECK_THROWS(hdi(Vector::Constant(1, 0.0), 0.9));
  CHECK_THROWS(hdi(v, 1.0));
}

TEST_CASE("moments of a known sample") {
  Vector v(4);
  v << 1, 2, 3, 10;
  const Moments m = sample_moments(v);
  const double mean = 4.0;
  double m2 = 0, m3 = 0, m4 = 0;
  for (double x : {1.0, 2.0, 3.0, 10.0}) {
    m2 += std::pow(x - mean, 2) / 4;
    m3 += std::pow(x - mean, 3) / 4;
    m4 += std::pow(x - mean, 4) / 4;
  }
  CHECK(m.mean == doctest::Approx(mean));
  CHECK(m.sd == doctest::Approx(std::sqrt(m2 * 4 / 3)));
  CHECK(m.skewness == doctest::Approx(m3 / std::pow(m2, 1.5)));
  CHECK(m.excess_kurtosis == doctest::Approx(m4 / (m2 * m2) - 3));
  CHECK(m.get(2) == m.sd);
  CHECK_THROWS(m.get(5));
}

TEST_CASE("ks statistic against the normal cdf") {
  Vector v(1);
  v << 0.0;
  CHECK(ks_statistic_normal(v, 0, 1) == doctest::Approx(0.5));
  std::mt19937_64 rng(1);
  std::normal_distribution<double> nd(0.0, 1.0);
  Vector big(5000);
  for (auto& x : big) x = nd(rng);
  CHECK(ks_statistic_normal(big, 0, 1) < ks_critical_1pct(5000));
  CHECK(ks_statistic_normal(big, 0.3, 1) > ks_critical_1pct(5000));
  CHECK(ks_critical_1pct(100) == doctest::Approx(0.16276).epsilon(1e-3));
}

TEST_CASE("coverage study shape and calibration") {
  std::mt19937_64 rng(7);
  std::normal_distribution<double> nd(0.0, 1.0);
  std::vector<CoverageRun> runs;
  for (int r = 0; r < 400; ++r) {
    Vector d(400);
    for (auto& x : d) x = nd(rng);
    runs.push_back({d, nd(rng)});
  }
  const CoverageTable t = coverage_study(runs, default_alpha_grid());
  REQUIRE(t.rows.size() == 19);
  for (const auto& row : t.rows) {
    CHECK(row.n_trials == 400);
    CHECK(row.wilson_low <= row.empirical);
    CHECK(row.empirical <= row.wilson_high);
  }
  CHECK(t.rows[17].alpha == doctest::Approx(0.9));
  CHECK(t.rows[17].wilson_low <= 0.9);
  CHECK(t.rows[17].wilson_high >= 0.9);
  CHECK(t.to_csv().rfind("alpha,empirical,wilson_low,wilson_high\n", 0) == 0);
  CHECK_THROWS(coverage_study({runs[0]}, {0.5}));
}
