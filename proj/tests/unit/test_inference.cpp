#include <cmath>
#include <filesystem>
#include <random>

#include "doctest.h"
#include "semisub/diagnostics.hpp"
#include "semisub/inference.hpp"
#include "../support/oracles.hpp"

using namespace semisub;

namespace {

LogDensity std_normal(int dim) {
  (void)dim;
  return [](const Vector& z, Vector* g) {
    if (g) *g = -z;
    return -0.5 * z.squaredNorm();
  };
}

struct Fixture {
  Dataset data;
  SsrModel model;
  BezierSubspace sub;
  BezierSubspace naive_sub;
};

const Fixture& fixture() {
  static const Fixture f = [] {
    SimSpec spec = SimSpec::toy(3);
    spec.n_test = 20;
    Dataset data = generate(spec).data;
    SsrModel model(MlpArchitecture::uniform(1, 2, 6), 2, LikelihoodHead::normal_learnable());
    TrainConfig cfg;
    cfg.max_epochs = 200;
    cfg.learning_rate = 0.01;
    BezierSubspace sub = build_projection(train_subspace(model, data, 3, cfg));
    cfg.scope = CurveScope::weights_and_theta;
    BezierSubspace naive = build_projection(train_subspace(model, data, 3, cfg));
    return Fixture{data, model, sub, naive};
  }();
  return f;
}

}  // namespace

TEST_CASE("hmc is reproducible per seed and chain") {
  HmcConfig cfg;
  cfg.n_samples = 50;
  cfg.n_warmup = 20;
  cfg.n_chains = 2;
  cfg.seed = 42;
  const Vector init = Vector::Zero(3);
  const PosteriorSamples a = hmc_sample(std_normal(3), cfg, init);
  const PosteriorSamples b = hmc_sample(std_normal(3), cfg, init);
  CHECK(a.draws == b.draws);
  CHECK(a.size() == 100);
  CHECK(a.columns[0] == "z_1");
  CHECK(a.chain.front() == 0);
  CHECK(a.chain.back() == 1);
  CHECK(a.stats.size() == 2);
  // chain c of a seeded run equals chain 0 of seed + c
  HmcConfig single = cfg;
  single.n_chains = 1;
  single.seed = 43;
  const PosteriorSamples c = hmc_sample(std_normal(3), single, init);
  CHECK(c.draws == a.draws.bottomRows(50));
}

TEST_CASE("leapfrog energy error is second order") {
  const Vector q = Vector::Constant(4, 0.7), p = Vector::Constant(4, -0.4);
  LogDensity banana = [](const Vector& z, Vector* g) {
    const double a = z[1] - z[0] * z[0];
    if (g) {
      *g = -z;
      (*g)[0] += 2 * a * z[0];
      (*g)[1] -= a;
    }
    return -0.5 * z.squaredNorm() - 0.5 * a * a;
  };
  const double e1 = std::abs(leapfrog_energy_error(banana, q, p, 0.02, 50));
  const double e2 = std::abs(leapfrog_energy_error(banana, q, p, 0.01, 100));
  CHECK(e1 > 0);
  CHECK(e1 / e2 == doctest::Approx(4.0).epsilon(0.1));
}

TEST_CASE("hmc fails loudly when warmup never accepts") {
  HmcConfig cfg;
  cfg.step_size = 50.0;
  cfg.target_accept.reset();
  cfg.n_warmup = 10;
  cfg.n_samples = 5;
  cfg.n_chains = 1;
  LogDensity stiff = [](const Vector& z, Vector* g) {
    if (g) *g = -1e6 * z;
    return -0.5e6 * z.squaredNorm();
  };
  CHECK_THROWS_AS(hmc_sample(stiff, cfg, Vector::Constant(2, 0.1)), NumericError);
  LogDensity broken = [](const Vector&, Vector* g) {
    if (g) g->setZero(1);
    return std::nan("");
  };
  CHECK_THROWS_AS(hmc_sample(broken, cfg, Vector::Zero(1)), NumericError);
}

TEST_CASE("elliptical slice matches a conjugate normal posterior") {
  // prior N(1, 2^2), y ~ N(z, 0.5^2) for 4 observations
  const std::vector<double> ys{2.0, 2.5, 1.0, 3.1};
  EssLogLik ll = [&](const Vector& z, std::uint64_t) {
    double s = 0;
    for (double y : ys) s += oracle::normal_logpdf(y, z[0], 0.5);
    return s;
  };
  const double prec = 1.0 / 4.0 + ys.size() / 0.25;
  const double mean = (1.0 / 4.0 + (2.0 + 2.5 + 1.0 + 3.1) / 0.25) / prec;
  EssConfig cfg;
  cfg.n_samples = 20000;
  cfg.n_warmup = 200;
  cfg.n_chains = 1;
  cfg.seed = 9;
  const PosteriorSamples s =
      ess_sample(ll, Vector::Constant(1, 1.0), Vector::Constant(1, 2.0), cfg, Vector::Zero(1));
  const Moments m = sample_moments(s.draws.col(0));
  CHECK(m.mean == doctest::Approx(mean).epsilon(0.01));
  CHECK(m.sd == doctest::Approx(std::sqrt(1.0 / prec)).epsilon(0.03));
}

TEST_CASE("elliptical slice minibatches are keyed deterministically") {
  const Fixture& f = fixture();
  SamplerConfig cfg;
  cfg.sampler = SamplerKind::ess;
  cfg.ess.n_samples = 30;
  cfg.ess.n_warmup = 10;
  cfg.ess.n_chains = 1;
  cfg.ess.minibatch = 8;
  const PriorSpec prior;
  const PosteriorSamples a = sample_semi_subspace(f.model, f.sub, prior, f.data, cfg);
  const PosteriorSamples b = sample_semi_subspace(f.model, f.sub, prior, f.data, cfg);
  CHECK(a.draws == b.draws);
  CHECK(a.kind == SpaceKind::semi);
  CHECK(a.draws.allFinite());
}

TEST_CASE("subspace log posterior assembles likelihood and priors") {
  const Fixture& f = fixture();
  PriorSpec prior;
  prior.sigma_phi = 0.7;
  prior.sigma_theta = 1.3;
  prior.log_sigma_mean = -1.0;
  prior.log_sigma_sd = 0.5;
  const Dataset train = f.data.subset(Split::train);
  for (const BezierSubspace* sub : {&f.sub, &f.naive_sub}) {
    const SubspacePosterior post(f.model, *sub, prior, train);
    std::mt19937_64 rng(1);
    const Vector z = 0.3 * oracle::random_matrix(post.dim(), 1, rng);
    const Vector params = post.to_params(z);

    Vector w_expected = sub->mean + sub->projection * z.head(3);
    double lp = 0;
    for (int i = 0; i < 3; ++i) lp += oracle::normal_logpdf(z[i], 0, 0.7);
    if (!post.naive()) {
      CHECK(params.head(2) == z.segment(3, 2));
      CHECK((params.segment(2, f.model.d()) - w_expected).norm() < 1e-14);
      for (int i = 3; i < 5; ++i) lp += oracle::normal_logpdf(z[i], 0, 1.3);
    } else {
      CHECK((params.head(w_expected.size()) - w_expected).norm() < 1e-14);
    }
    lp += oracle::normal_logpdf(z[z.size() - 1], -1.0, 0.5);
    const double expected = log_likelihood(f.model, params, train.slice()) + lp;
    CHECK(post.log_posterior(z, nullptr) == doctest::Approx(expected).epsilon(1e-12));

    Vector g;
    post.log_posterior(z, &g);
    const Vector fd =
        oracle::fd_gradient([&](const Vector& v) { return post.log_posterior(v, nullptr); }, z);
    CHECK(oracle::max_rel_err(g, fd) < 1e-4);
  }
}

TEST_CASE("full-space posterior layout and gradient") {
  const Fixture& f = fixture();
  PriorSpec prior;
  prior.sigma_w = 0.8;
  const Dataset train = f.data.subset(Split::train);
  const FullSpacePosterior post(f.model, prior, train);
  const Vector params = f.model.init_params(4);
  const Vector z = post.from_params(params);
  CHECK(post.to_params(z) == params);
  CHECK(post.labels().front() == "w_1");
  CHECK(post.labels()[f.model.d()] == "theta_1");
  CHECK(post.labels().back() == "log_sigma");
  double lp = log_likelihood(f.model, params, train.slice());
  for (std::size_t i = 0; i < f.model.d(); ++i) lp += oracle::normal_logpdf(z[i], 0, 0.8);
  lp += oracle::normal_logpdf(params[0], 0, 1) + oracle::normal_logpdf(params[1], 0, 1);
  lp += oracle::normal_logpdf(params[params.size() - 1], 0, 1);
  CHECK(post.log_posterior(z, nullptr) == doctest::Approx(lp).epsilon(1e-12));
  Vector g;
  post.log_posterior(z, &g);
  const Vector fd =
      oracle::fd_gradient([&](const Vector& v) { return post.log_posterior(v, nullptr); }, z);
  CHECK(oracle::max_rel_err(g, fd) < 1e-4);
}

TEST_CASE("full-space HMC respects the dimension guard") {
  const Fixture& f = fixture();
  HmcConfig cfg;
  cfg.n_samples = 5;
  cfg.n_warmup = 5;
  cfg.n_chains = 1;
  FullSpaceOptions opts;
  opts.max_dim = 10;
  CHECK_THROWS_AS(sample_full_space(f.model, PriorSpec{}, f.data, cfg, f.model.init_params(0), opts),
                  std::invalid_argument);
  opts.allow_large = true;
  const PosteriorSamples s =
      sample_full_space(f.model, PriorSpec{}, f.data, cfg, f.model.init_params(0), opts);
  CHECK(s.kind == SpaceKind::full);
  CHECK(s.draws.cols() == static_cast<Eigen::Index>(f.model.num_params()));
  CHECK((draw_params(f.model, nullptr, s, 0) -
         FullSpacePosterior(f.model, PriorSpec{}, f.data).to_params(s.draws.row(0).transpose()))
            .norm() == 0.0);
}

TEST_CASE("semi and naive sampling produce the documented columns") {
  const Fixture& f = fixture();
  SamplerConfig cfg;
  cfg.hmc.n_samples = 20;
  cfg.hmc.n_warmup = 20;
  cfg.hmc.n_chains = 2;
  const PosteriorSamples semi = sample_semi_subspace(f.model, f.sub, PriorSpec{}, f.data, cfg);
  CHECK(semi.columns ==
        std::vector<std::string>{"phi_1", "phi_2", "phi_3", "theta_1", "theta_2", "log_sigma"});
  const PosteriorSamples naive =
      sample_semi_subspace(f.model, f.naive_sub, PriorSpec{}, f.data, cfg);
  CHECK(naive.kind == SpaceKind::naive);
  CHECK(naive.columns == semi.columns);
  // derived theta columns agree with the mapped subspace point
  const Vector params = draw_params(f.model, &f.naive_sub, naive, 7);
  CHECK(params.head(2) == naive.draws.row(7).segment(3, 2).transpose());
}

TEST_CASE("tempering configuration is validated") {
  TemperingConfig t;
  t.enabled = true;
  t.temperature = 0;
  CHECK_THROWS(t.validate());
  t.temperature = 2;
  t.grid_points = 2;
  CHECK_THROWS(t.validate());
}

TEST_CASE("samples csv round trip is exact") {
  const Fixture& f = fixture();
  SamplerConfig cfg;
  cfg.hmc.n_samples = 15;
  cfg.hmc.n_warmup = 10;
  cfg.hmc.n_chains = 2;
  const PosteriorSamples s = sample_semi_subspace(f.model, f.sub, PriorSpec{}, f.data, cfg);
  const auto path = std::filesystem::temp_directory_path() / "semisub_samples_test.csv";
  write_samples_csv(s, path);
  const PosteriorSamples back = read_samples_csv(path);
  std::filesystem::remove(path);
  CHECK(back.draws == s.draws);
  CHECK(back.log_post == s.log_post);
  CHECK(back.chain == s.chain);
  CHECK(back.draw == s.draw);
  CHECK(back.columns == s.columns);
  CHECK(back.kind == SpaceKind::semi);
  CHECK(samples_to_csv(back) == samples_to_csv(s));
  CHECK_THROWS(parse_samples_csv("chain,draw,log_post,phi_1\n0,0,1.0\n"));
}
