#include "semisub/diagnostics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>

#include "semisub/io.hpp"

namespace semisub {

namespace {

double sigmoid(double x) {
  return x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
}

}  // namespace

Vector pointwise_lppd(const Matrix& loglik) {
  if (loglik.rows() < 1 || loglik.cols() < 1)
    throw std::invalid_argument("lppd needs at least one draw and one point");
  const double log_s = std::log(static_cast<double>(loglik.rows()));
  Vector out(loglik.cols());
  for (Eigen::Index i = 0; i < loglik.cols(); ++i) {
    const double m = loglik.col(i).maxCoeff();
    out[i] = std::isfinite(m)
                 ? m + std::log((loglik.col(i).array() - m).exp().sum()) - log_s
                 : m;
  }
  return out;
}

LppdResult lppd_from_loglik(const Matrix& loglik) {
  LppdResult r;
  r.pointwise = pointwise_lppd(loglik);
  const auto n = static_cast<double>(r.pointwise.size());
  r.lppd = r.pointwise.mean();
  if (r.pointwise.size() > 1) {
    const double var = (r.pointwise.array() - r.lppd).square().sum() / (n - 1.0);
    r.se = std::sqrt(var / n);
  }
  return r;
}

LppdResult lppd(const PosteriorSamples& samples, const SsrModel& model,
                const BezierSubspace* sub, const Dataset& test) {
  if (samples.size() == 0) throw std::invalid_argument("lppd: no posterior draws");
  if (test.rows() == 0) throw std::invalid_argument("lppd: empty test set");
  Matrix ll(static_cast<Eigen::Index>(samples.size()), static_cast<Eigen::Index>(test.rows()));
  for (std::size_t s = 0; s < samples.size(); ++s)
    ll.row(static_cast<Eigen::Index>(s)) =
        pointwise_log_likelihood(model, draw_params(model, sub, samples, s), test.slice())
            .transpose();
  return lppd_from_loglik(ll);
}

Matrix predictive_mu(const PosteriorSamples& samples, const SsrModel& model,
                     const BezierSubspace* sub, const Dataset& data) {
  Matrix mu(static_cast<Eigen::Index>(samples.size()), static_cast<Eigen::Index>(data.rows()));
  for (std::size_t s = 0; s < samples.size(); ++s)
    mu.row(static_cast<Eigen::Index>(s)) =
        predict_mu(model, draw_params(model, sub, samples, s), data.slice()).transpose();
  return mu;
}

double Moments::get(int moment) const {
  switch (moment) {
    case 1:
      return mean;
    case 2:
      return sd;
    case 3:
      return skewness;
    case 4:
      return excess_kurtosis;
  }
  throw std::invalid_argument("moment must be 1, 2, 3 or 4");
}

Moments sample_moments(const Vector& x) {
  if (x.size() < 2) throw std::invalid_argument("moments need at least two draws");
  Moments m;
  const auto n = static_cast<double>(x.size());
  m.mean = x.mean();
  const Eigen::ArrayXd c = x.array() - m.mean;
  const double m2 = c.square().sum() / n;
  const double m3 = c.cube().sum() / n;
  const double m4 = c.square().square().sum() / n;
  m.sd = std::sqrt(c.square().sum() / (n - 1.0));
  if (m2 > 0) {
    m.skewness = m3 / std::pow(m2, 1.5);
    m.excess_kurtosis = m4 / (m2 * m2) - 3.0;
  }
  return m;
}

double posterior_moment_diff(const PosteriorSamples& a, const PosteriorSamples& b,
                             const std::string& param, int moment) {
  if (moment < 1 || moment > 4) throw std::invalid_argument("moment must be 1..4");
  return sample_moments(a.values(param)).get(moment) -
         sample_moments(b.values(param)).get(moment);
}

double quantile(std::vector<double> v, double prob) {
  if (v.empty()) throw std::invalid_argument("quantile of empty sample");
  if (!(prob >= 0 && prob <= 1)) throw std::invalid_argument("quantile level must be in [0, 1]");
  std::sort(v.begin(), v.end());
  const double h = (static_cast<double>(v.size()) - 1.0) * prob;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const auto hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (h - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

std::pair<double, double> credible_interval(const Vector& draws, double alpha) {
  if (!(alpha > 0 && alpha < 1)) throw std::invalid_argument("alpha must lie in (0, 1)");
  if (draws.size() < 2) throw std::invalid_argument("credible interval needs >= 2 draws");
  std::vector<double> v(draws.data(), draws.data() + draws.size());
  std::sort(v.begin(), v.end());
  return {quantile(v, (1.0 - alpha) / 2.0), quantile(v, (1.0 + alpha) / 2.0)};
}

std::pair<double, double> credible_interval(const PosteriorSamples& samples,
                                            const std::string& param, double alpha) {
  return credible_interval(samples.values(param), alpha);
}

std::pair<double, double> wilson_interval(std::size_t successes, std::size_t n, double z) {
  if (n == 0) throw std::invalid_argument("wilson interval needs n > 0");
  if (successes > n) throw std::invalid_argument("successes exceed trials");
  const double nn = static_cast<double>(n);
  const double ph = static_cast<double>(successes) / nn;
  const double z2 = z * z;
  const double denom = 1.0 + z2 / nn;
  const double center = (ph + z2 / (2.0 * nn)) / denom;
  const double half = z / denom * std::sqrt(ph * (1.0 - ph) / nn + z2 / (4.0 * nn * nn));
  return {std::max(0.0, center - half), std::min(1.0, center + half)};
}

std::string CoverageTable::to_csv() const {
  std::ostringstream os;
  os << "alpha,empirical,wilson_low,wilson_high\n";
  for (const auto& r : rows)
    os << format_double(r.alpha) << ',' << format_double(r.empirical) << ','
       << format_double(r.wilson_low) << ',' << format_double(r.wilson_high) << '\n';
  return os.str();
}

CoverageTable coverage_study(const std::vector<CoverageRun>& runs,
                             const std::vector<double>& alphas) {
  if (runs.size() < 2) throw std::invalid_argument("coverage study needs at least two runs");
  CoverageTable table;
  for (double a : alphas) {
    std::size_t hits = 0;
    for (const auto& run : runs) {
      const auto [lo, hi] = credible_interval(run.draws, a);
      if (run.truth >= lo && run.truth <= hi) ++hits;
    }
    const auto [wl, wh] = wilson_interval(hits, runs.size());
    table.rows.push_back({a, static_cast<double>(hits) / static_cast<double>(runs.size()), wl, wh,
                          runs.size()});
  }
  return table;
}

std::vector<double> default_alpha_grid() {
  std::vector<double> g;
  for (int i = 1; i <= 19; ++i) g.push_back(i * 0.05);
  return g;
}

std::pair<double, double> hdi(const Vector& draws, double mass) {
  if (!(mass > 0 && mass < 1)) throw std::invalid_argument("HDI mass must lie in (0, 1)");
  const auto s = static_cast<std::size_t>(draws.size());
  const auto w = static_cast<std::size_t>(std::ceil(mass * static_cast<double>(s)));
  if (s < 2 || w < 2 || w > s)
    throw std::invalid_argument("too few draws for the requested HDI mass");
  std::vector<double> v(draws.data(), draws.data() + draws.size());
  std::sort(v.begin(), v.end());
  std::size_t best = 0;
  double best_width = v[w - 1] - v[0];
  for (std::size_t i = 1; i + w <= s; ++i) {
    const double width = v[i + w - 1] - v[i];
    if (width < best_width) {
      best_width = width;
      best = i;
    }
  }
  return {v[best], v[best + w - 1]};
}

double auc(const std::vector<int>& labels, const std::vector<double>& scores) {
  if (labels.size() != scores.size())
    throw DimensionError("auc scores", labels.size(), scores.size());
  std::size_t n_pos = 0;
  for (int l : labels) {
    if (l != 0 && l != 1) throw std::invalid_argument("auc labels must be 0 or 1");
    n_pos += static_cast<std::size_t>(l);
  }
  const std::size_t n_neg = labels.size() - n_pos;
  if (n_pos == 0 || n_neg == 0) throw std::invalid_argument("auc needs both classes");
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](auto a, auto b) { return scores[a] < scores[b]; });
  double rank_sum = 0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && scores[order[j + 1]] == scores[order[i]]) ++j;
    const double midrank = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t t = i; t <= j; ++t)
      if (labels[order[t]] == 1) rank_sum += midrank;
    i = j + 1;
  }
  const double np = static_cast<double>(n_pos), nn = static_cast<double>(n_neg);
  return (rank_sum - np * (np + 1.0) / 2.0) / (np * nn);
}

double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

double ks_statistic_normal(const Vector& draws, double mean, double sd) {
  std::vector<double> v(draws.data(), draws.data() + draws.size());
  if (v.empty()) throw std::invalid_argument("KS statistic of empty sample");
  std::sort(v.begin(), v.end());
  const double n = static_cast<double>(v.size());
  double d = 0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    const double f = normal_cdf((v[i] - mean) / sd);
    d = std::max({d, (static_cast<double>(i) + 1.0) / n - f, f - static_cast<double>(i) / n});
  }
  return d;
}

double ks_critical_1pct(std::size_t n) {
  return std::sqrt(-0.5 * std::log(0.005)) / std::sqrt(static_cast<double>(n));
}

std::vector<PredictiveBand> predictive_bands(const PosteriorSamples& samples,
                                             const SsrModel& model, const BezierSubspace* sub,
                                             const Dataset& data, double mass,
                                             std::uint64_t seed) {
  const Matrix mu = predictive_mu(samples, model, sub, data);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  Vector sigma = Vector::Constant(mu.rows(), model.head().fixed_sigma);
  if (model.has_log_sigma()) sigma = samples.values("log_sigma").array().exp();
  const Matrix u_orig = data.u_stats.invert(data.U);

  std::vector<PredictiveBand> bands;
  for (Eigen::Index i = 0; i < mu.cols(); ++i) {
    Vector draws(mu.rows());
    for (Eigen::Index s = 0; s < mu.rows(); ++s) {
      const double m = mu(s, i);
      switch (model.head().family) {
        case Family::normal:
          draws[s] = m + sigma[s] * normal(rng);
          break;
        case Family::poisson:
          draws[s] = std::exp(m);
          break;
        case Family::bernoulli:
          draws[s] = sigmoid(m);
          break;
      }
    }
    const auto [lo, hi] = hdi(draws, mass);
    bands.push_back({u_orig(i, 0), draws.mean(), lo, hi});
  }
  return bands;
}

std::string bands_to_csv(const std::vector<PredictiveBand>& bands) {
  std::ostringstream os;
  os << "u,mean,hdi_low,hdi_high\n";
  for (const auto& b : bands)
    os << format_double(b.u) << ',' << format_double(b.mean) << ',' << format_double(b.hdi_low)
       << ',' << format_double(b.hdi_high) << '\n';
  return os.str();
}

nlohmann::json DiagnosticsReport::to_json() const {
  nlohmann::json j;
  j["lppd"] = {{"value", lppd.lppd}, {"se", lppd.se}, {"normalized", true}};
  j["n_test"] = n_test;
  j["n_draws"] = n_draws;
  nlohmann::json ps = nlohmann::json::array();
  for (const auto& p : params)
    ps.push_back({{"name", p.name},
                  {"mean", p.moments.mean},
                  {"sd", p.moments.sd},
                  {"skewness", p.moments.skewness},
                  {"excess_kurtosis", p.moments.excess_kurtosis},
                  {"q025", p.q025},
                  {"q975", p.q975}});
  j["parameters"] = ps;
  j["interval_kind"] = interval_kind;
  j["auc"] = auc ? nlohmann::json(*auc) : nlohmann::json(nullptr);
  return j;
}

DiagnosticsReport evaluate_posterior(const PosteriorSamples& samples, const SsrModel& model,
                                     const BezierSubspace* sub, const Dataset& test) {
  DiagnosticsReport r;
  r.lppd = lppd(samples, model, sub, test);
  r.n_test = test.rows();
  r.n_draws = samples.size();
  if (samples.size() >= 2)
    for (const auto& name : samples.columns) {
      if (name.rfind("w_", 0) == 0) continue;
      const Vector v = samples.values(name);
      const auto [lo, hi] = credible_interval(v, 0.95);
      r.params.push_back({name, sample_moments(v), lo, hi});
    }
  if (model.head().family == Family::bernoulli) {
    const Matrix mu = predictive_mu(samples, model, sub, test);
    std::vector<double> scores;
    std::vector<int> labels;
    bool both = false;
    for (Eigen::Index i = 0; i < mu.cols(); ++i) {
      scores.push_back(mu.col(i).unaryExpr([](double m) { return sigmoid(m); }).mean());
      labels.push_back(static_cast<int>(test.y[i]));
      both = both || labels.back() != labels.front();
    }
    if (both) r.auc = auc(labels, scores);
  }
  return r;
}

}  // namespace semisub
