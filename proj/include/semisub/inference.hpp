#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "semisub/data.hpp"
#include "semisub/model.hpp"
#include "semisub/subspace.hpp"

namespace semisub {

/// Log density with optional gradient output. Implementations must be
/// reentrant: chains call them concurrently.
using LogDensity = std::function<double(const Vector& z, Vector* grad)>;

struct PriorSpec {
  double sigma_phi = 1.0;
  double sigma_theta = 1.0;
  /// Full-space sampling only: sd of the isotropic prior on network weights.
  double sigma_w = 1.0;
  /// Normal prior on log sigma when the dispersion is learnable.
  double log_sigma_mean = 0.0;
  double log_sigma_sd = 1.0;

  void validate() const;
};

double normal_log_density(double x, double mean, double sd);

enum class SpaceKind { semi, naive, full, generic };

std::string to_string(SpaceKind k);

struct ChainStats {
  int chain = 0;
  double acceptance_rate = 0;
  int divergences = 0;  // kept iterations only
  double step_size = 0;
  long long density_evals = 0;
  /// Elliptical slice only: largest number of bracket shrinks in one draw.
  int max_shrinks = 0;
};

struct PosteriorSamples {
  SpaceKind kind = SpaceKind::generic;
  int k = 0;
  int p = 0;
  std::size_t d = 0;
  bool has_log_sigma = false;
  std::vector<std::string> columns;
  Matrix draws;  // one row per kept draw
  Vector log_post;
  std::vector<int> chain;
  std::vector<int> draw;
  std::vector<ChainStats> stats;

  std::size_t size() const { return static_cast<std::size_t>(draws.rows()); }
  /// Column index or -1.
  int column(const std::string& name) const;
  Vector values(const std::string& name) const;
  void validate() const;
};

/// Concatenates draws of identically laid-out sample sets.
PosteriorSamples concat(const PosteriorSamples& a, const PosteriorSamples& b);

struct HmcConfig {
  double step_size = 0.05;
  int n_leapfrog = 20;
  int n_samples = 1000;  // kept draws per chain
  int n_warmup = 500;
  int n_chains = 4;
  std::uint64_t seed = 0;
  /// Dual-averaging target acceptance during warmup; nullopt disables it.
  std::optional<double> target_accept = 0.8;
  /// sd of the Gaussian jitter added to the initial point per chain.
  double init_jitter = 0.0;
  bool parallel_chains = true;

  void validate() const;
};

/// Unit-mass HMC with leapfrog integration. Chain c uses seed + c.
PosteriorSamples hmc_sample(const LogDensity& target, const HmcConfig& cfg,
                            const Vector& init,
                            std::vector<std::string> labels = {});

/// One leapfrog trajectory from (q, p); returns the Hamiltonian change
/// H(end) - H(start). Exposed for integrator checks.
double leapfrog_energy_error(const LogDensity& target, const Vector& q,
                             const Vector& p, double step_size, int n_steps);

/// Log-likelihood for elliptical slice sampling. `batch_key` identifies the
/// iteration so subsampled likelihoods can pick their minibatch as a pure
/// function of it; full-batch likelihoods ignore it.
using EssLogLik = std::function<double(const Vector& z, std::uint64_t batch_key)>;

struct EssConfig {
  int n_samples = 1000;
  int n_warmup = 200;
  int n_chains = 4;
  std::uint64_t seed = 0;
  /// Rows per subsampled likelihood evaluation; 0 uses the full batch.
  int minibatch = 0;
  double init_jitter = 0.0;
  bool parallel_chains = true;
  int max_shrinks = 10000;

  void validate() const;
};

/// Murray-style elliptical slice sampling under the Gaussian prior
/// N(prior_mean, diag(prior_sd^2)).
PosteriorSamples ess_sample(const EssLogLik& log_lik, const Vector& prior_mean,
                            const Vector& prior_sd, const EssConfig& cfg,
                            const Vector& init,
                            std::vector<std::string> labels = {});

/// Log posterior over (phi, theta[, log_sigma]) for the semi-structured
/// subspace, or over (phi[, log_sigma]) when the subspace folds theta in.
class SubspacePosterior {
 public:
  SubspacePosterior(const SsrModel& model, const BezierSubspace& sub,
                    PriorSpec prior, Dataset data);

  int dim() const;
  int k() const { return sub_.k(); }
  bool naive() const { return sub_.scope == CurveScope::weights_and_theta; }
  /// Index of theta_1 in the sampling vector (semi only), else -1.
  int theta_index() const { return naive() ? -1 : k(); }
  int log_sigma_index() const;

  /// Flat model parameters [theta | w | log_sigma] for a sampling vector.
  Vector to_params(const Vector& z) const;
  /// Sampling-space column labels; naive mode appends derived theta columns
  /// when samples are assembled, not here.
  std::vector<std::string> labels() const;
  /// Chain start: phi = 0, theta = theta* (or 0 when cold), log_sigma*.
  Vector initial_point(bool cold) const;

  double log_likelihood(const Vector& z, Vector* grad) const;
  /// Likelihood of a row subset scaled by n / rows.size().
  double log_likelihood_rows(const Vector& z,
                             const std::vector<std::size_t>& rows) const;
  double log_prior(const Vector& z, Vector* grad) const;
  double log_posterior(const Vector& z, Vector* grad) const;
  /// Prior (mean, sd) per sampling coordinate.
  std::pair<Vector, Vector> prior_moments() const;

  LogDensity target() const;

  const SsrModel& model() const { return model_; }
  const BezierSubspace& subspace() const { return sub_; }
  const PriorSpec& prior() const { return prior_; }
  const Dataset& data() const { return data_; }

 private:
  SsrModel model_;
  BezierSubspace sub_;
  PriorSpec prior_;
  Dataset data_;
};

/// Log posterior over all model parameters, sampling vector [w | theta | log_sigma].
class FullSpacePosterior {
 public:
  FullSpacePosterior(const SsrModel& model, PriorSpec prior, Dataset data);

  int dim() const { return static_cast<int>(model_.num_params()); }
  Vector to_params(const Vector& z) const;
  Vector from_params(const Vector& params) const;
  std::vector<std::string> labels() const;

  double log_likelihood(const Vector& z, Vector* grad) const;
  double log_prior(const Vector& z, Vector* grad) const;
  double log_posterior(const Vector& z, Vector* grad) const;
  LogDensity target() const;

 private:
  SsrModel model_;
  PriorSpec prior_;
  Dataset data_;
};

enum class TemperingForm { plain, split };

struct TemperingConfig {
  bool enabled = false;
  TemperingForm form = TemperingForm::plain;
  double temperature = 1.0;
  int grid_points = 401;
  /// Quadrature range is +-grid_halfwidth_sd * sigma_theta.
  double grid_halfwidth_sd = 8.0;

  void validate() const;
};

/// Pieces of a posterior needed for split tempering with one scalar
/// structured parameter at `theta_index`, prior N(0, sigma_theta^2).
struct SplitTemperingProblem {
  LogDensity log_likelihood;
  /// Prior over every coordinate except theta.
  LogDensity log_prior_rest;
  int theta_index = 0;
  double sigma_theta = 1.0;
};

/// log p(D | rest) = log integral p(D | theta, rest) N(theta; 0, sigma^2)
/// dtheta by the trapezoid rule; gradient with respect to the non-theta
/// coordinates (theta entry zero).
double split_log_marginal(const SplitTemperingProblem& prob, const Vector& z,
                          const TemperingConfig& cfg, Vector* grad);

/// Plain form: log-likelihood / T + log prior.
/// Split form: log p(theta | rest, D) + log p(D | rest) / T + log p(rest),
/// which equals loglik + log p(theta) + (1/T - 1) log p(D | rest) + log p(rest).
double tempered_log_posterior(const SplitTemperingProblem& prob, const Vector& z,
                              const TemperingConfig& cfg, Vector* grad);

SplitTemperingProblem split_problem(const SubspacePosterior& post);
LogDensity tempered_target(const SubspacePosterior& post, const TemperingConfig& cfg);
double tempered_log_posterior(const SubspacePosterior& post, const Vector& z,
                              const TemperingConfig& cfg, Vector* grad = nullptr);

enum class SamplerKind { hmc, ess };

struct SamplerConfig {
  SamplerKind sampler = SamplerKind::hmc;
  HmcConfig hmc;
  EssConfig ess;
  TemperingConfig tempering;
  /// Start theta at 0 instead of the trained theta*.
  bool cold_start = false;
  double init_jitter = 0.1;
};

/// Samples (phi, theta[, log_sigma]) on the training rows of `data`.
PosteriorSamples sample_semi_subspace(const SsrModel& model,
                                      const BezierSubspace& sub,
                                      const PriorSpec& prior, const Dataset& data,
                                      const SamplerConfig& cfg);

struct FullSpaceOptions {
  std::size_t max_dim = 2000;
  bool allow_large = false;
};

/// HMC over all model parameters on the training rows of `data`, started
/// from `init_params` (flat layout) plus the configured jitter.
PosteriorSamples sample_full_space(const SsrModel& model, const PriorSpec& prior,
                                   const Dataset& data, const HmcConfig& cfg,
                                   const Vector& init_params,
                                   const FullSpaceOptions& opts = {});

/// Flat model parameters of draw `row`. `sub` is required for semi/naive draws.
Vector draw_params(const SsrModel& model, const BezierSubspace* sub,
                   const PosteriorSamples& samples, std::size_t row);

/// Header chain,draw,log_post,<columns>.
std::string samples_to_csv(const PosteriorSamples& samples);
void write_samples_csv(const PosteriorSamples& samples,
                       const std::filesystem::path& path);
/// Kind inferred from column names (w_* -> full, phi_* -> semi).
PosteriorSamples parse_samples_csv(const std::string& text);
PosteriorSamples read_samples_csv(const std::filesystem::path& path);

}  // namespace semisub
