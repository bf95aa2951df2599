#include <cmath>
#include <exception>
#include <numbers>
#include <random>
#include <sstream>
#include <thread>

#include "semisub/inference.hpp"
#include "semisub/io.hpp"

namespace semisub {

namespace {

struct ChainResult {
  Matrix draws;
  Vector log_post;
  ChainStats stats;
};

template <typename F>
std::vector<ChainResult> run_chains(int n_chains, bool parallel, F&& run_one) {
  std::vector<ChainResult> out(static_cast<std::size_t>(n_chains));
  if (!parallel || n_chains <= 1 || std::thread::hardware_concurrency() <= 1) {
    for (int c = 0; c < n_chains; ++c) out[static_cast<std::size_t>(c)] = run_one(c);
    return out;
  }
  std::vector<std::exception_ptr> errors(static_cast<std::size_t>(n_chains));
  std::vector<std::thread> workers;
  for (int c = 0; c < n_chains; ++c)
    workers.emplace_back([&, c] {
      try {
        out[static_cast<std::size_t>(c)] = run_one(c);
      } catch (...) {
        errors[static_cast<std::size_t>(c)] = std::current_exception();
      }
    });
  for (auto& w : workers) w.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
  return out;
}

PosteriorSamples merge_chains(std::vector<ChainResult> chains, Eigen::Index dim,
                              std::vector<std::string> labels) {
  PosteriorSamples s;
  if (labels.empty())
    for (Eigen::Index i = 0; i < dim; ++i) labels.push_back("z_" + std::to_string(i + 1));
  if (static_cast<Eigen::Index>(labels.size()) != dim)
    throw DimensionError("sample labels", static_cast<std::size_t>(dim), labels.size());
  s.columns = std::move(labels);
  Eigen::Index total = 0;
  for (const auto& c : chains) total += c.draws.rows();
  s.draws.resize(total, dim);
  s.log_post.resize(total);
  Eigen::Index row = 0;
  for (std::size_t c = 0; c < chains.size(); ++c) {
    const auto& ch = chains[c];
    for (Eigen::Index i = 0; i < ch.draws.rows(); ++i, ++row) {
      s.draws.row(row) = ch.draws.row(i);
      s.log_post[row] = ch.log_post[i];
      s.chain.push_back(static_cast<int>(c));
      s.draw.push_back(static_cast<int>(i));
    }
    s.stats.push_back(ch.stats);
  }
  return s;
}

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Dual averaging of log step size toward a target acceptance probability.
class StepSizeAdapter {
 public:
  StepSizeAdapter(double eps0, double target)
      : mu_(std::log(10.0 * eps0)), target_(target) {}

  double update(double accept_prob) {
    ++m_;
    const double md = static_cast<double>(m_);
    h_bar_ = (1.0 - 1.0 / (md + kT0)) * h_bar_ + (target_ - accept_prob) / (md + kT0);
    const double log_eps = mu_ - std::sqrt(md) / kGamma * h_bar_;
    const double w = std::pow(md, -kKappa);
    log_eps_bar_ = w * log_eps + (1.0 - w) * log_eps_bar_;
    return std::exp(log_eps);
  }
  double final_step() const { return std::exp(log_eps_bar_); }

 private:
  static constexpr double kGamma = 0.05, kT0 = 10.0, kKappa = 0.75;
  double mu_;
  double target_;
  double h_bar_ = 0.0;
  double log_eps_bar_ = 0.0;
  long long m_ = 0;
};

struct Trajectory {
  Vector q, grad;
  double log_density = 0;
  double energy_change = 0;
  bool divergent = false;
  int evals = 0;
};

Trajectory leapfrog(const LogDensity& target, const Vector& q0, const Vector& g0,
                    double lp0, const Vector& p0, double eps, int n_steps) {
  Trajectory t;
  t.q = q0;
  t.grad = g0;
  Vector p = p0;
  const double h0 = -lp0 + 0.5 * p0.squaredNorm();
  double lp = lp0;
  p += 0.5 * eps * t.grad;
  for (int l = 0; l < n_steps; ++l) {
    t.q += eps * p;
    lp = target(t.q, &t.grad);
    ++t.evals;
    if (!std::isfinite(lp) || !t.grad.allFinite()) {
      t.divergent = true;
      t.energy_change = std::numeric_limits<double>::infinity();
      return t;
    }
    if (l + 1 < n_steps) p += eps * t.grad;
  }
  p += 0.5 * eps * t.grad;
  t.log_density = lp;
  t.energy_change = (-lp + 0.5 * p.squaredNorm()) - h0;
  if (!std::isfinite(t.energy_change) || t.energy_change > 1000.0) t.divergent = true;
  return t;
}

ChainResult hmc_chain(const LogDensity& target, const HmcConfig& cfg,
                      const Vector& init, int c) {
  std::mt19937_64 rng(cfg.seed + static_cast<std::uint64_t>(c));
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  const Eigen::Index m = init.size();
  auto gaussian = [&] {
    Vector v(m);
    for (Eigen::Index i = 0; i < m; ++i) v[i] = normal(rng);
    return v;
  };

  Vector q = init;
  if (cfg.init_jitter > 0) q += cfg.init_jitter * gaussian();
  Vector g(m);
  double lp = target(q, &g);
  ChainResult out;
  out.stats.chain = c;
  out.stats.density_evals = 1;
  if (!std::isfinite(lp) || !g.allFinite())
    throw NumericError("HMC chain " + std::to_string(c) +
                       ": target is not finite at the initial point");

  double eps = cfg.step_size;
  std::optional<StepSizeAdapter> adapter;
  if (cfg.target_accept && cfg.n_warmup > 0) adapter.emplace(eps, *cfg.target_accept);

  out.draws.resize(cfg.n_samples, m);
  out.log_post.resize(cfg.n_samples);
  int warm_accepts = 0, kept_accepts = 0, warm_divergences = 0;
  const int total = cfg.n_warmup + cfg.n_samples;
  for (int it = 0; it < total; ++it) {
    const Vector p = gaussian();
    const Trajectory t = leapfrog(target, q, g, lp, p, eps, cfg.n_leapfrog);
    out.stats.density_evals += t.evals;
    double accept_prob = 0.0;
    if (t.divergent) {
      ++(it < cfg.n_warmup ? warm_divergences : out.stats.divergences);
    } else {
      accept_prob = std::min(1.0, std::exp(-t.energy_change));
    }
    const bool accept = !t.divergent && unif(rng) < accept_prob;
    if (accept) {
      q = t.q;
      g = t.grad;
      lp = t.log_density;
    }
    if (it < cfg.n_warmup) {
      warm_accepts += accept ? 1 : 0;
      if (adapter) {
        eps = adapter->update(accept_prob);
        if (it + 1 == cfg.n_warmup) eps = adapter->final_step();
      }
      if (it + 1 == cfg.n_warmup && warm_accepts == 0)
        throw NumericError("HMC chain " + std::to_string(c) +
                           ": zero acceptance over warmup (step size " +
                           format_double(eps) + ", " +
                           std::to_string(warm_divergences) + " divergences)");
    } else {
      kept_accepts += accept ? 1 : 0;
      const int row = it - cfg.n_warmup;
      out.draws.row(row) = q.transpose();
      out.log_post[row] = lp;
    }
  }
  out.stats.step_size = eps;
  out.stats.acceptance_rate =
      cfg.n_samples > 0 ? static_cast<double>(kept_accepts) / cfg.n_samples
      : cfg.n_warmup > 0 ? static_cast<double>(warm_accepts) / cfg.n_warmup
                         : 0.0;
  return out;
}

ChainResult ess_chain(const EssLogLik& log_lik, const Vector& mean, const Vector& sd,
                      const EssConfig& cfg, const Vector& init, int c) {
  std::mt19937_64 rng(cfg.seed + static_cast<std::uint64_t>(c));
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  const Eigen::Index m = init.size();
  constexpr double kTwoPi = 2.0 * std::numbers::pi;

  auto log_prior = [&](const Vector& z) {
    double s = 0;
    for (Eigen::Index i = 0; i < m; ++i) s += normal_log_density(z[i], mean[i], sd[i]);
    return s;
  };

  Vector z = init;
  if (cfg.init_jitter > 0)
    for (Eigen::Index i = 0; i < m; ++i) z[i] += cfg.init_jitter * normal(rng);

  ChainResult out;
  out.stats.chain = c;
  out.stats.acceptance_rate = 1.0;
  out.draws.resize(cfg.n_samples, m);
  out.log_post.resize(cfg.n_samples);
  const bool subsampled = cfg.minibatch > 0;
  const std::uint64_t chain_key = splitmix64(cfg.seed ^ splitmix64(static_cast<std::uint64_t>(c) + 1));
  double ll = log_lik(z, chain_key);
  ++out.stats.density_evals;

  const int total = cfg.n_warmup + cfg.n_samples;
  for (int it = 0; it < total; ++it) {
    const std::uint64_t key =
        subsampled ? splitmix64(chain_key + static_cast<std::uint64_t>(it)) : chain_key;
    if (subsampled) {
      ll = log_lik(z, key);
      ++out.stats.density_evals;
    }
    if (!std::isfinite(ll))
      throw NumericError("elliptical slice chain " + std::to_string(c) +
                         ": likelihood not finite at the current state");
    Vector nu(m);
    for (Eigen::Index i = 0; i < m; ++i) nu[i] = sd[i] * normal(rng);
    const Vector centered = z - mean;
    const double log_y = ll + std::log(unif(rng));
    double angle = unif(rng) * kTwoPi;
    double lo = angle - kTwoPi, hi = angle;
    int shrinks = 0;
    while (true) {
      const Vector prop = mean + centered * std::cos(angle) + nu * std::sin(angle);
      const double llp = log_lik(prop, key);
      ++out.stats.density_evals;
      if (std::isfinite(llp) && llp > log_y) {
        z = prop;
        ll = llp;
        break;
      }
      if (++shrinks > cfg.max_shrinks)
        throw NumericError("elliptical slice chain " + std::to_string(c) +
                           ": bracket shrinkage did not terminate");
      if (angle < 0)
        lo = angle;
      else
        hi = angle;
      angle = lo + (hi - lo) * unif(rng);
    }
    out.stats.max_shrinks = std::max(out.stats.max_shrinks, shrinks);
    if (it >= cfg.n_warmup) {
      const int row = it - cfg.n_warmup;
      out.draws.row(row) = z.transpose();
      out.log_post[row] = ll + log_prior(z);
    }
  }
  return out;
}

}  // namespace

double normal_log_density(double x, double mean, double sd) {
  const double r = (x - mean) / sd;
  return -0.5 * std::log(2.0 * std::numbers::pi) - std::log(sd) - 0.5 * r * r;
}

void PriorSpec::validate() const {
  if (!(sigma_phi > 0 && sigma_theta > 0 && sigma_w > 0 && log_sigma_sd > 0))
    throw std::invalid_argument("prior standard deviations must be > 0");
}

std::string to_string(SpaceKind k) {
  switch (k) {
    case SpaceKind::semi:
      return "semi";
    case SpaceKind::naive:
      return "naive";
    case SpaceKind::full:
      return "full";
    case SpaceKind::generic:
      return "generic";
  }
  return "?";
}

int PosteriorSamples::column(const std::string& name) const {
  for (std::size_t i = 0; i < columns.size(); ++i)
    if (columns[i] == name) return static_cast<int>(i);
  return -1;
}

Vector PosteriorSamples::values(const std::string& name) const {
  const int c = column(name);
  if (c < 0) throw std::invalid_argument("samples have no column '" + name + "'");
  return draws.col(c);
}

void PosteriorSamples::validate() const {
  if (static_cast<Eigen::Index>(columns.size()) != draws.cols())
    throw DimensionError("sample columns", columns.size(), static_cast<std::size_t>(draws.cols()));
  if (log_post.size() != draws.rows() || chain.size() != size() || draw.size() != size())
    throw std::invalid_argument("samples: inconsistent per-draw metadata");
  if (!draws.allFinite()) throw std::invalid_argument("samples: non-finite draws");
  for (std::size_t i = 1; i < chain.size(); ++i)
    if (chain[i] < chain[i - 1])
      throw std::invalid_argument("samples: chain ids are not contiguous");
}

PosteriorSamples concat(const PosteriorSamples& a, const PosteriorSamples& b) {
  if (a.columns != b.columns) throw std::invalid_argument("concat: column mismatch");
  PosteriorSamples s = a;
  s.draws.resize(a.draws.rows() + b.draws.rows(), a.draws.cols());
  s.draws << a.draws, b.draws;
  s.log_post.resize(a.log_post.size() + b.log_post.size());
  s.log_post << a.log_post, b.log_post;
  const int offset = a.chain.empty() ? 0 : a.chain.back() + 1;
  for (int c : b.chain) s.chain.push_back(c + offset);
  s.draw.insert(s.draw.end(), b.draw.begin(), b.draw.end());
  s.stats.insert(s.stats.end(), b.stats.begin(), b.stats.end());
  return s;
}

void HmcConfig::validate() const {
  if (!(step_size > 0)) throw std::invalid_argument("HMC step size must be > 0");
  if (n_leapfrog < 1) throw std::invalid_argument("HMC leapfrog steps must be >= 1");
  if (n_samples < 0 || n_warmup < 0) throw std::invalid_argument("HMC draw counts must be >= 0");
  if (n_chains < 1) throw std::invalid_argument("HMC needs at least one chain");
  if (target_accept && !(*target_accept > 0 && *target_accept < 1))
    throw std::invalid_argument("target acceptance must lie in (0, 1)");
  if (init_jitter < 0) throw std::invalid_argument("init jitter must be >= 0");
}

void EssConfig::validate() const {
  if (n_samples < 0 || n_warmup < 0) throw std::invalid_argument("ESS draw counts must be >= 0");
  if (n_chains < 1) throw std::invalid_argument("ESS needs at least one chain");
  if (minibatch < 0) throw std::invalid_argument("ESS minibatch must be >= 0");
  if (max_shrinks < 1) throw std::invalid_argument("ESS max_shrinks must be >= 1");
}

PosteriorSamples hmc_sample(const LogDensity& target, const HmcConfig& cfg,
                            const Vector& init, std::vector<std::string> labels) {
  cfg.validate();
  auto chains = run_chains(cfg.n_chains, cfg.parallel_chains,
                           [&](int c) { return hmc_chain(target, cfg, init, c); });
  return merge_chains(std::move(chains), init.size(), std::move(labels));
}

double leapfrog_energy_error(const LogDensity& target, const Vector& q,
                             const Vector& p, double step_size, int n_steps) {
  Vector g(q.size());
  const double lp = target(q, &g);
  return leapfrog(target, q, g, lp, p, step_size, n_steps).energy_change;
}

PosteriorSamples ess_sample(const EssLogLik& log_lik, const Vector& prior_mean,
                            const Vector& prior_sd, const EssConfig& cfg,
                            const Vector& init, std::vector<std::string> labels) {
  cfg.validate();
  if (prior_mean.size() != init.size())
    throw DimensionError("ESS prior mean", static_cast<std::size_t>(init.size()),
                         static_cast<std::size_t>(prior_mean.size()));
  if (prior_sd.size() != init.size())
    throw DimensionError("ESS prior sd", static_cast<std::size_t>(init.size()),
                         static_cast<std::size_t>(prior_sd.size()));
  if (!(prior_sd.array() > 0).all()) throw std::invalid_argument("ESS prior sd must be > 0");
  auto chains = run_chains(cfg.n_chains, cfg.parallel_chains, [&](int c) {
    return ess_chain(log_lik, prior_mean, prior_sd, cfg, init, c);
  });
  return merge_chains(std::move(chains), init.size(), std::move(labels));
}

std::string samples_to_csv(const PosteriorSamples& s) {
  s.validate();
  std::ostringstream os;
  os << "chain,draw,log_post";
  for (const auto& c : s.columns) os << ',' << csv_escape(c);
  os << '\n';
  for (std::size_t r = 0; r < s.size(); ++r) {
    const auto row = static_cast<Eigen::Index>(r);
    os << s.chain[r] << ',' << s.draw[r] << ',' << format_double(s.log_post[row]);
    for (Eigen::Index c = 0; c < s.draws.cols(); ++c) os << ',' << format_double(s.draws(row, c));
    os << '\n';
  }
  return os.str();
}

void write_samples_csv(const PosteriorSamples& samples, const std::filesystem::path& path) {
  write_file_atomic(path, samples_to_csv(samples));
}

PosteriorSamples parse_samples_csv(const std::string& text) {
  const CsvTable t = parse_csv(text);
  if (t.header.size() < 3 || t.header[0] != "chain" || t.header[1] != "draw" ||
      t.header[2] != "log_post")
    throw std::invalid_argument("samples csv must start with chain,draw,log_post");
  PosteriorSamples s;
  s.columns.assign(t.header.begin() + 3, t.header.end());
  for (const auto& c : s.columns) {
    if (c.rfind("phi_", 0) == 0) ++s.k;
    else if (c.rfind("theta_", 0) == 0) ++s.p;
    else if (c.rfind("w_", 0) == 0) ++s.d;
    else if (c == "log_sigma") s.has_log_sigma = true;
  }
  s.kind = s.d > 0 ? SpaceKind::full : s.k > 0 ? SpaceKind::semi : SpaceKind::generic;
  const auto n = static_cast<Eigen::Index>(t.rows.size());
  const auto m = static_cast<Eigen::Index>(s.columns.size());
  s.draws.resize(n, m);
  s.log_post.resize(n);
  for (Eigen::Index r = 0; r < n; ++r) {
    const auto& row = t.rows[static_cast<std::size_t>(r)];
    s.chain.push_back(static_cast<int>(parse_double(row[0])));
    s.draw.push_back(static_cast<int>(parse_double(row[1])));
    s.log_post[r] = parse_double(row[2]);
    for (Eigen::Index c = 0; c < m; ++c)
      s.draws(r, c) = parse_double(row[static_cast<std::size_t>(c + 3)]);
  }
  s.validate();
  return s;
}

PosteriorSamples read_samples_csv(const std::filesystem::path& path) {
  return parse_samples_csv(read_text_file(path));
}

}  // namespace semisub
