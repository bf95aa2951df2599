#pragma once

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "semisub/data.hpp"
#include "semisub/inference.hpp"

namespace semisub {

struct LppdResult {
  double lppd = 0;  // mean over points
  double se = 0;    // sd over points / sqrt(n)
  Vector pointwise;
};

/// Per-point log predictive density log((1/S) sum_s exp(ll[s, i])), given an
/// S x n matrix of log likelihood values.
Vector pointwise_lppd(const Matrix& loglik);
LppdResult lppd_from_loglik(const Matrix& loglik);

/// Normalized LPPD of `test` under the posterior draws.
LppdResult lppd(const PosteriorSamples& samples, const SsrModel& model,
                const BezierSubspace* sub, const Dataset& test);

/// S x n matrix of predicted mu.
Matrix predictive_mu(const PosteriorSamples& samples, const SsrModel& model,
                     const BezierSubspace* sub, const Dataset& data);

struct Moments {
  double mean = 0;
  double sd = 0;
  double skewness = 0;
  double excess_kurtosis = 0;

  double get(int moment) const;
};

/// Population (1/n) central moments; sd uses 1/(n-1).
Moments sample_moments(const Vector& x);

/// moment_m(a[param]) - moment_m(b[param]); m = 1 mean, 2 sd, 3 skewness,
/// 4 excess kurtosis.
double posterior_moment_diff(const PosteriorSamples& a, const PosteriorSamples& b,
                             const std::string& param, int moment);

/// Linear interpolation between order statistics (type 7).
double quantile(std::vector<double> sorted_or_not, double prob);
std::pair<double, double> credible_interval(const Vector& draws, double alpha);
std::pair<double, double> credible_interval(const PosteriorSamples& samples,
                                            const std::string& param, double alpha);

/// Wilson score interval for successes / n at the given z.
std::pair<double, double> wilson_interval(std::size_t successes, std::size_t n,
                                          double z = 1.96);

struct CoverageRow {
  double alpha = 0;
  double empirical = 0;
  double wilson_low = 0;
  double wilson_high = 0;
  std::size_t n_trials = 0;
};

struct CoverageTable {
  std::vector<CoverageRow> rows;
  std::string to_csv() const;
};

struct CoverageRun {
  Vector draws;  // posterior draws of one parameter
  double truth = 0;
};

CoverageTable coverage_study(const std::vector<CoverageRun>& runs,
                             const std::vector<double>& alphas);

/// Default nominal grid 0.05, 0.10, ..., 0.95.
std::vector<double> default_alpha_grid();

/// Shortest window of ceil(mass * S) consecutive order statistics.
std::pair<double, double> hdi(const Vector& draws, double mass);

/// Rank-based AUC with midranks for ties.
double auc(const std::vector<int>& labels, const std::vector<double>& scores);

/// Kolmogorov-Smirnov distance between the empirical CDF and N(mean, sd^2).
double ks_statistic_normal(const Vector& draws, double mean, double sd);
/// Asymptotic one-sample KS critical value at 1% significance.
double ks_critical_1pct(std::size_t n);

double normal_cdf(double x);

struct PredictiveBand {
  double u = 0;
  double mean = 0;
  double hdi_low = 0;
  double hdi_high = 0;
};

/// Posterior predictive bands per row of `data`: outcome draws for the
/// normal head, mean response otherwise.
std::vector<PredictiveBand> predictive_bands(const PosteriorSamples& samples,
                                             const SsrModel& model,
                                             const BezierSubspace* sub,
                                             const Dataset& data, double mass,
                                             std::uint64_t seed);
std::string bands_to_csv(const std::vector<PredictiveBand>& bands);

struct ParamSummary {
  std::string name;
  Moments moments;
  double q025 = 0, q975 = 0;
};

struct DiagnosticsReport {
  LppdResult lppd;
  std::size_t n_test = 0;
  std::size_t n_draws = 0;
  std::vector<ParamSummary> params;
  std::optional<double> auc;
  std::string interval_kind = "equal-tailed";
  nlohmann::json to_json() const;
};

DiagnosticsReport evaluate_posterior(const PosteriorSamples& samples,
                                     const SsrModel& model, const BezierSubspace* sub,
                                     const Dataset& test);

}  // namespace semisub
