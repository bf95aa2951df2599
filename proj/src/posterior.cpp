#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "semisub/inference.hpp"

namespace semisub {

namespace {

double log_sum_exp(const Vector& a) {
  const double m = a.maxCoeff();
  if (!std::isfinite(m)) return m;
  return m + std::log((a.array() - m).exp().sum());
}

std::vector<std::size_t> minibatch_rows(std::size_t n, std::size_t m, std::uint64_t key) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  std::mt19937_64 rng(key);
  for (std::size_t i = 0; i < m; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, n - 1);
    std::swap(idx[i], idx[pick(rng)]);
  }
  idx.resize(m);
  std::sort(idx.begin(), idx.end());
  return idx;
}

}  // namespace

SubspacePosterior::SubspacePosterior(const SsrModel& model, const BezierSubspace& sub,
                                     PriorSpec prior, Dataset data)
    : model_(model), sub_(sub), prior_(prior), data_(std::move(data)) {
  prior_.validate();
  const std::size_t expected = model_.d() + (naive() ? model_.p() : 0);
  if (static_cast<std::size_t>(sub_.dim()) != expected)
    throw DimensionError("subspace dimension", expected, static_cast<std::size_t>(sub_.dim()));
  if (!naive() && sub_.theta_star.size() != 0 && sub_.theta_star.size() != model_.p())
    throw DimensionError("theta*", model_.p(), sub_.theta_star.size());
  if (data_.p() != model_.p()) throw DimensionError("dataset p", model_.p(), data_.p());
  if (data_.q() != model_.q()) throw DimensionError("dataset q", model_.q(), data_.q());
  validate_outcomes(model_.head(), data_.y);
}

int SubspacePosterior::dim() const {
  return k() + (naive() ? 0 : model_.p()) + (model_.has_log_sigma() ? 1 : 0);
}

int SubspacePosterior::log_sigma_index() const {
  return model_.has_log_sigma() ? dim() - 1 : -1;
}

Vector SubspacePosterior::to_params(const Vector& z) const {
  if (z.size() != dim()) throw DimensionError("sampling vector", dim(), z.size());
  Vector params(static_cast<Eigen::Index>(model_.num_params()));
  const Vector point = sub_.mean + sub_.projection * z.head(k());
  if (naive()) {
    params.head(sub_.dim()) = point;
  } else {
    params.head(model_.p()) = z.segment(k(), model_.p());
    params.segment(model_.p(), sub_.dim()) = point;
  }
  if (model_.has_log_sigma()) params[params.size() - 1] = z[log_sigma_index()];
  return params;
}

std::vector<std::string> SubspacePosterior::labels() const {
  std::vector<std::string> l;
  for (int i = 0; i < k(); ++i) l.push_back("phi_" + std::to_string(i + 1));
  if (!naive())
    for (int i = 0; i < model_.p(); ++i) l.push_back("theta_" + std::to_string(i + 1));
  if (model_.has_log_sigma()) l.push_back("log_sigma");
  return l;
}

Vector SubspacePosterior::initial_point(bool cold) const {
  Vector z = Vector::Zero(dim());
  if (!naive() && !cold && sub_.theta_star.size() == model_.p())
    z.segment(k(), model_.p()) = sub_.theta_star;
  if (model_.has_log_sigma())
    z[log_sigma_index()] = cold ? prior_.log_sigma_mean
                                : sub_.log_sigma_star.value_or(prior_.log_sigma_mean);
  return z;
}

double SubspacePosterior::log_likelihood(const Vector& z, Vector* grad) const {
  const Vector params = to_params(z);
  if (!grad) return semisub::log_likelihood(model_, params, data_.slice());
  Vector g;
  const double ll = log_likelihood_grad(model_, params, data_.slice(), g);
  grad->resize(dim());
  if (naive()) {
    grad->head(k()) = sub_.projection.transpose() * g.head(sub_.dim());
  } else {
    grad->head(k()) = sub_.projection.transpose() * g.segment(model_.p(), sub_.dim());
    grad->segment(k(), model_.p()) = g.head(model_.p());
  }
  if (model_.has_log_sigma()) (*grad)[log_sigma_index()] = g[g.size() - 1];
  return ll;
}

double SubspacePosterior::log_likelihood_rows(const Vector& z,
                                              const std::vector<std::size_t>& rows) const {
  if (rows.empty()) return 0.0;
  const Dataset batch = data_.subset(rows);
  const double scale = static_cast<double>(data_.rows()) / static_cast<double>(rows.size());
  return scale * semisub::log_likelihood(model_, to_params(z), batch.slice());
}

std::pair<Vector, Vector> SubspacePosterior::prior_moments() const {
  Vector mean = Vector::Zero(dim()), sd(dim());
  sd.head(k()).setConstant(prior_.sigma_phi);
  if (!naive()) sd.segment(k(), model_.p()).setConstant(prior_.sigma_theta);
  if (model_.has_log_sigma()) {
    mean[log_sigma_index()] = prior_.log_sigma_mean;
    sd[log_sigma_index()] = prior_.log_sigma_sd;
  }
  return {mean, sd};
}

double SubspacePosterior::log_prior(const Vector& z, Vector* grad) const {
  if (z.size() != dim()) throw DimensionError("sampling vector", dim(), z.size());
  const auto [mean, sd] = prior_moments();
  double lp = 0;
  for (Eigen::Index i = 0; i < z.size(); ++i) lp += normal_log_density(z[i], mean[i], sd[i]);
  if (grad) *grad = -((z - mean).array() / sd.array().square()).matrix();
  return lp;
}

double SubspacePosterior::log_posterior(const Vector& z, Vector* grad) const {
  if (!grad) return log_likelihood(z, nullptr) + log_prior(z, nullptr);
  Vector gp;
  const double ll = log_likelihood(z, grad);
  const double lp = log_prior(z, &gp);
  *grad += gp;
  return ll + lp;
}

LogDensity SubspacePosterior::target() const {
  return [this](const Vector& z, Vector* g) { return log_posterior(z, g); };
}

FullSpacePosterior::FullSpacePosterior(const SsrModel& model, PriorSpec prior, Dataset data)
    : model_(model), prior_(prior), data_(std::move(data)) {
  prior_.validate();
  if (data_.p() != model_.p()) throw DimensionError("dataset p", model_.p(), data_.p());
  if (data_.q() != model_.q()) throw DimensionError("dataset q", model_.q(), data_.q());
  validate_outcomes(model_.head(), data_.y);
}

Vector FullSpacePosterior::to_params(const Vector& z) const {
  if (z.size() != dim()) throw DimensionError("sampling vector", dim(), z.size());
  const auto d = static_cast<Eigen::Index>(model_.d());
  Vector params(z.size());
  params.head(model_.p()) = z.segment(d, model_.p());
  params.segment(model_.p(), d) = z.head(d);
  if (model_.has_log_sigma()) params[params.size() - 1] = z[z.size() - 1];
  return params;
}

Vector FullSpacePosterior::from_params(const Vector& params) const {
  if (params.size() != dim()) throw DimensionError("flat parameters", dim(), params.size());
  const auto d = static_cast<Eigen::Index>(model_.d());
  Vector z(params.size());
  z.head(d) = params.segment(model_.p(), d);
  z.segment(d, model_.p()) = params.head(model_.p());
  if (model_.has_log_sigma()) z[z.size() - 1] = params[params.size() - 1];
  return z;
}

std::vector<std::string> FullSpacePosterior::labels() const {
  std::vector<std::string> l;
  for (std::size_t i = 0; i < model_.d(); ++i) l.push_back("w_" + std::to_string(i + 1));
  for (int i = 0; i < model_.p(); ++i) l.push_back("theta_" + std::to_string(i + 1));
  if (model_.has_log_sigma()) l.push_back("log_sigma");
  return l;
}

double FullSpacePosterior::log_likelihood(const Vector& z, Vector* grad) const {
  const Vector params = to_params(z);
  if (!grad) return semisub::log_likelihood(model_, params, data_.slice());
  Vector g;
  const double ll = log_likelihood_grad(model_, params, data_.slice(), g);
  *grad = from_params(g);
  return ll;
}

double FullSpacePosterior::log_prior(const Vector& z, Vector* grad) const {
  if (z.size() != dim()) throw DimensionError("sampling vector", dim(), z.size());
  const auto d = static_cast<Eigen::Index>(model_.d());
  double lp = 0;
  if (grad) grad->resize(z.size());
  for (Eigen::Index i = 0; i < z.size(); ++i) {
    double mean = 0, sd = i < d ? prior_.sigma_w : prior_.sigma_theta;
    if (model_.has_log_sigma() && i == z.size() - 1) {
      mean = prior_.log_sigma_mean;
      sd = prior_.log_sigma_sd;
    }
    lp += normal_log_density(z[i], mean, sd);
    if (grad) (*grad)[i] = -(z[i] - mean) / (sd * sd);
  }
  return lp;
}

double FullSpacePosterior::log_posterior(const Vector& z, Vector* grad) const {
  if (!grad) return log_likelihood(z, nullptr) + log_prior(z, nullptr);
  Vector gp;
  const double ll = log_likelihood(z, grad);
  const double lp = log_prior(z, &gp);
  *grad += gp;
  return ll + lp;
}

LogDensity FullSpacePosterior::target() const {
  return [this](const Vector& z, Vector* g) { return log_posterior(z, g); };
}

void TemperingConfig::validate() const {
  if (!(temperature > 0) || !std::isfinite(temperature))
    throw std::invalid_argument("temperature must be a finite value > 0");
  if (grid_points < 3) throw std::invalid_argument("tempering grid needs >= 3 points");
  if (!(grid_halfwidth_sd > 0)) throw std::invalid_argument("tempering grid half-width must be > 0");
}

double split_log_marginal(const SplitTemperingProblem& prob, const Vector& z,
                          const TemperingConfig& cfg, Vector* grad) {
  cfg.validate();
  if (prob.theta_index < 0 || prob.theta_index >= z.size())
    throw std::invalid_argument("split tempering needs a scalar structured parameter");
  const int n = cfg.grid_points;
  const double half = cfg.grid_halfwidth_sd * prob.sigma_theta;
  const double h = 2.0 * half / (n - 1);
  Vector a(n);
  std::vector<Vector> grads;
  if (grad) grads.resize(static_cast<std::size_t>(n));
  Vector zj = z;
  for (int j = 0; j < n; ++j) {
    const double th = -half + j * h;
    zj[prob.theta_index] = th;
    const double ll = prob.log_likelihood(zj, grad ? &grads[static_cast<std::size_t>(j)] : nullptr);
    const double wt = (j == 0 || j == n - 1) ? 0.5 * h : h;
    a[j] = ll + normal_log_density(th, 0.0, prob.sigma_theta) + std::log(wt);
  }
  const double lml = log_sum_exp(a);
  if (grad) {
    grad->setZero(z.size());
    if (std::isfinite(lml))
      for (int j = 0; j < n; ++j) {
        const double wj = std::exp(a[j] - lml);
        if (wj > 0) *grad += wj * grads[static_cast<std::size_t>(j)];
      }
    (*grad)[prob.theta_index] = 0.0;
  }
  return lml;
}

double tempered_log_posterior(const SplitTemperingProblem& prob, const Vector& z,
                              const TemperingConfig& cfg, Vector* grad) {
  cfg.validate();
  const double inv_t = 1.0 / cfg.temperature;
  Vector g_ll, g_rest;
  const double ll = prob.log_likelihood(z, grad ? &g_ll : nullptr);
  const double rest = prob.log_prior_rest(z, grad ? &g_rest : nullptr);
  double theta_term = 0, theta_grad = 0;
  if (prob.theta_index >= 0) {
    const double th = z[prob.theta_index];
    theta_term = normal_log_density(th, 0.0, prob.sigma_theta);
    theta_grad = -th / (prob.sigma_theta * prob.sigma_theta);
  }

  if (cfg.form == TemperingForm::plain) {
    if (grad) {
      *grad = inv_t * g_ll + g_rest;
      if (prob.theta_index >= 0) (*grad)[prob.theta_index] += theta_grad;
    }
    return inv_t * ll + theta_term + rest;
  }

  if (prob.theta_index < 0)
    throw std::invalid_argument(
        "split tempering is only supported for a single structured parameter");
  double value = ll + theta_term + rest;
  if (grad) {
    *grad = g_ll + g_rest;
    (*grad)[prob.theta_index] += theta_grad;
  }
  if (inv_t != 1.0) {
    Vector g_ml;
    const double lml = split_log_marginal(prob, z, cfg, grad ? &g_ml : nullptr);
    value += (inv_t - 1.0) * lml;
    if (grad) *grad += (inv_t - 1.0) * g_ml;
  }
  return value;
}

namespace {

SplitTemperingProblem make_problem(const SubspacePosterior& post, TemperingForm form) {
  const int p = post.model().p();
  if (form == TemperingForm::split && (post.naive() || p != 1))
    throw std::invalid_argument(
        "split tempering is only supported for a single structured parameter "
        "sampled in its full space (p = 1)");
  SplitTemperingProblem prob;
  prob.log_likelihood = [&post](const Vector& z, Vector* g) { return post.log_likelihood(z, g); };
  prob.sigma_theta = post.prior().sigma_theta;
  prob.theta_index = form == TemperingForm::split ? post.theta_index() : -1;
  if (form == TemperingForm::plain) {
    prob.log_prior_rest = [&post](const Vector& z, Vector* g) { return post.log_prior(z, g); };
  } else {
    const int ti = post.theta_index();
    prob.log_prior_rest = [&post, ti](const Vector& z, Vector* g) {
      const double th = z[ti];
      double lp = post.log_prior(z, g) - normal_log_density(th, 0.0, post.prior().sigma_theta);
      if (g) (*g)[ti] = 0.0;
      return lp;
    };
  }
  return prob;
}

}  // namespace

SplitTemperingProblem split_problem(const SubspacePosterior& post) {
  return make_problem(post, TemperingForm::split);
}

double tempered_log_posterior(const SubspacePosterior& post, const Vector& z,
                              const TemperingConfig& cfg, Vector* grad) {
  return tempered_log_posterior(make_problem(post, cfg.form), z, cfg, grad);
}

LogDensity tempered_target(const SubspacePosterior& post, const TemperingConfig& cfg) {
  if (!cfg.enabled) return post.target();
  cfg.validate();
  auto prob = std::make_shared<SplitTemperingProblem>(make_problem(post, cfg.form));
  return [prob, cfg](const Vector& z, Vector* g) {
    return tempered_log_posterior(*prob, z, cfg, g);
  };
}

PosteriorSamples sample_semi_subspace(const SsrModel& model, const BezierSubspace& sub,
                                      const PriorSpec& prior, const Dataset& data,
                                      const SamplerConfig& cfg) {
  const SubspacePosterior post(model, sub, prior, data.subset(Split::train));
  const Vector init = post.initial_point(cfg.cold_start);
  PosteriorSamples s;
  if (cfg.sampler == SamplerKind::hmc) {
    HmcConfig hc = cfg.hmc;
    hc.init_jitter = cfg.init_jitter;
    s = hmc_sample(tempered_target(post, cfg.tempering), hc, init, post.labels());
  } else {
    EssConfig ec = cfg.ess;
    ec.init_jitter = cfg.init_jitter;
    const auto [mean, sd] = post.prior_moments();
    std::shared_ptr<SplitTemperingProblem> prob;
    if (cfg.tempering.enabled) {
      cfg.tempering.validate();
      prob = std::make_shared<SplitTemperingProblem>(make_problem(post, cfg.tempering.form));
    }
    const std::size_t n = post.data().rows();
    const auto mb = static_cast<std::size_t>(ec.minibatch);
    const TemperingConfig tc = cfg.tempering;
    EssLogLik ll = [&post, prob, tc, n, mb](const Vector& z, std::uint64_t key) {
      double v = (mb > 0 && mb < n) ? post.log_likelihood_rows(z, minibatch_rows(n, mb, key))
                                    : post.log_likelihood(z, nullptr);
      if (prob) {
        const double inv_t = 1.0 / tc.temperature;
        if (tc.form == TemperingForm::plain)
          v *= inv_t;
        else if (inv_t != 1.0)
          v += (inv_t - 1.0) * split_log_marginal(*prob, z, tc, nullptr);
      }
      return v;
    };
    s = ess_sample(ll, mean, sd, ec, init, post.labels());
  }

  s.k = sub.k();
  s.p = model.p();
  s.d = model.d();
  s.has_log_sigma = model.has_log_sigma();
  if (!post.naive()) {
    s.kind = SpaceKind::semi;
    return s;
  }
  // Naive draws carry theta only through the subspace; expose it as columns.
  s.kind = SpaceKind::naive;
  const int k = sub.k(), p = model.p();
  Matrix draws(s.draws.rows(), s.draws.cols() + p);
  for (Eigen::Index r = 0; r < s.draws.rows(); ++r) {
    const Vector z = s.draws.row(r).transpose();
    const Vector params = post.to_params(z);
    draws.row(r).head(k) = z.head(k).transpose();
    draws.row(r).segment(k, p) = params.head(p).transpose();
    if (model.has_log_sigma()) draws(r, k + p) = z[k];
  }
  std::vector<std::string> cols;
  for (int i = 0; i < k; ++i) cols.push_back("phi_" + std::to_string(i + 1));
  for (int i = 0; i < p; ++i) cols.push_back("theta_" + std::to_string(i + 1));
  if (model.has_log_sigma()) cols.push_back("log_sigma");
  s.draws = std::move(draws);
  s.columns = std::move(cols);
  return s;
}

PosteriorSamples sample_full_space(const SsrModel& model, const PriorSpec& prior,
                                   const Dataset& data, const HmcConfig& cfg,
                                   const Vector& init_params, const FullSpaceOptions& opts) {
  if (model.num_params() > opts.max_dim && !opts.allow_large)
    throw std::invalid_argument("full-space HMC over " + std::to_string(model.num_params()) +
                                " parameters exceeds the limit of " +
                                std::to_string(opts.max_dim) + "; pass the override to proceed");
  const FullSpacePosterior post(model, prior, data.subset(Split::train));
  PosteriorSamples s = hmc_sample(post.target(), cfg, post.from_params(init_params), post.labels());
  s.kind = SpaceKind::full;
  s.k = 0;
  s.p = model.p();
  s.d = model.d();
  s.has_log_sigma = model.has_log_sigma();
  return s;
}

Vector draw_params(const SsrModel& model, const BezierSubspace* sub,
                   const PosteriorSamples& s, std::size_t row) {
  const auto r = static_cast<Eigen::Index>(row);
  const int p = model.p();
  const auto d = static_cast<Eigen::Index>(model.d());
  const int ls = model.has_log_sigma() ? 1 : 0;
  Vector params(static_cast<Eigen::Index>(model.num_params()));
  if (s.kind == SpaceKind::full) {
    if (s.draws.cols() != d + p + ls)
      throw DimensionError("full-space draw", static_cast<std::size_t>(d + p + ls),
                           static_cast<std::size_t>(s.draws.cols()));
    params.head(p) = s.draws.row(r).segment(d, p).transpose();
    params.segment(p, d) = s.draws.row(r).head(d).transpose();
  } else {
    if (!sub) throw std::invalid_argument("subspace draws need the subspace to map to weights");
    const int k = sub->k();
    if (s.draws.cols() != k + p + ls)
      throw DimensionError("subspace draw", static_cast<std::size_t>(k + p + ls),
                           static_cast<std::size_t>(s.draws.cols()));
    const Vector point = phi_to_weights(*sub, s.draws.row(r).head(k).transpose());
    if (sub->scope == CurveScope::weights_and_theta) {
      params.head(point.size()) = point;
    } else {
      params.head(p) = s.draws.row(r).segment(k, p).transpose();
      params.segment(p, d) = point;
    }
  }
  if (ls) params[params.size() - 1] = s.draws(r, s.draws.cols() - 1);
  return params;
}

}  // namespace semisub
