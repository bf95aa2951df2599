#include <cmath>
#include <random>

#include "doctest.h"
#include "semisub/model.hpp"
#include "../support/oracles.hpp"

using namespace semisub;

namespace {

// Loop-based forward pass over the documented flat layout.
double naive_mlp(const MlpArchitecture& arch, const Vector& w, const Vector& u) {
  std::vector<double> a(u.data(), u.data() + u.size());
  std::size_t pos = 0;
  for (int l = 0; l < arch.num_layers(); ++l) {
    const int in = static_cast<int>(a.size());
    const int out = l + 1 < arch.num_layers() ? arch.hidden[l].width : 1;
    std::vector<double> z(out, 0.0);
    for (int o = 0; o < out; ++o)
      for (int i = 0; i < in; ++i) z[o] += w[pos + o * in + i] * a[i];
    pos += static_cast<std::size_t>(out * in);
    for (int o = 0; o < out; ++o) z[o] += w[pos + o];
    pos += out;
    if (l + 1 < arch.num_layers())
      for (auto& v : z)
        v = arch.hidden[l].activation == Activation::relu ? std::max(v, 0.0) : std::tanh(v);
    a = z;
  }
  return a[0];
}

struct Problem {
  Vector y;
  Matrix X, U;
  DataSlice slice() const { return {y, X, U}; }
};

Problem make_problem(const SsrModel& m, int n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  Problem pr;
  pr.X = oracle::random_matrix(n, m.p(), rng);
  pr.U = oracle::random_matrix(n, m.q(), rng);
  pr.y.resize(n);
  std::uniform_int_distribution<int> count(0, 6), bit(0, 1);
  std::normal_distribution<double> nd(0.0, 1.0);
  for (int i = 0; i < n; ++i) {
    switch (m.head().family) {
      case Family::normal:
        pr.y[i] = nd(rng);
        break;
      case Family::poisson:
        pr.y[i] = count(rng);
        break;
      case Family::bernoulli:
        pr.y[i] = bit(rng);
        break;
    }
  }
  return pr;
}

}  // namespace

TEST_CASE("architecture sizes") {
  CHECK(MlpArchitecture::uniform(1, 2, 16).num_weights() == 321);
  CHECK(MlpArchitecture::uniform(4, 2, 16).num_weights() == 369);
  const SsrModel m(MlpArchitecture::uniform(4, 2, 16), 3, LikelihoodHead::normal_learnable());
  CHECK(m.num_params() == 373);
  CHECK(m.log_sigma_offset() == 372);
  MlpArchitecture bad;
  bad.input_dim = 0;
  CHECK_THROWS(bad.validate());
}

TEST_CASE("forward pass matches a hand-worked network") {
  MlpArchitecture arch = MlpArchitecture::uniform(1, 1, 2);
  const SsrModel m(arch, 1, LikelihoodHead::normal_fixed(1.0));
  // theta | W1 (2x1) | b1 | W2 (1x2) | b2
  Vector params(8);
  params << 0.5, 1.0, -2.0, 0.0, 1.0, 3.0, 4.0, 0.25;
  Vector x(1), u(1);
  x << 2.0;
  u << 0.5;
  // hidden = relu(0.5, -1 + 1) = (0.5, 0); out = 1.5 + 0.25; plus x theta = 1
  CHECK(predict_mu(m, params, x, u) == doctest::Approx(2.75).epsilon(1e-15));
}

TEST_CASE("forward pass matches the loop oracle") {
  std::mt19937_64 rng(3);
  for (Activation act : {Activation::relu, Activation::tanh}) {
    MlpArchitecture arch;
    arch.input_dim = 3;
    arch.hidden = {{5, act}, {4, act}};
    const SsrModel m(arch, 2, LikelihoodHead::poisson());
    const Vector params = m.init_params(11);
    const Matrix U = oracle::random_matrix(7, 3, rng);
    const Vector w = params.segment(2, static_cast<Eigen::Index>(m.d()));
    const Vector out = mlp_forward(arch, {w.data(), static_cast<std::size_t>(w.size())}, U);
    for (int i = 0; i < 7; ++i)
      CHECK(out[i] == doctest::Approx(naive_mlp(arch, w, U.row(i).transpose())).epsilon(1e-12));
  }
}

TEST_CASE("head densities match closed forms") {
  CHECK(head_log_density(LikelihoodHead::normal_fixed(0.5), 1.2, 0.7, 0.5) ==
        doctest::Approx(oracle::normal_logpdf(1.2, 0.7, 0.5)));
  CHECK(head_log_density(LikelihoodHead::poisson(), 3, 0.4, 1) ==
        doctest::Approx(3 * 0.4 - std::exp(0.4) - std::log(6.0)));
  CHECK(head_log_density(LikelihoodHead::bernoulli(), 1, 0.3, 1) ==
        doctest::Approx(-std::log1p(std::exp(-0.3))));
  CHECK(head_log_density(LikelihoodHead::bernoulli(), 0, 0.3, 1) ==
        doctest::Approx(-std::log1p(std::exp(0.3))));
  // extreme linear predictors stay finite
  CHECK(std::isfinite(head_log_density(LikelihoodHead::bernoulli(), 1, -800, 1)));
}

TEST_CASE("log likelihood gradient matches finite differences") {
  const std::vector<LikelihoodHead> heads = {
      LikelihoodHead::normal_learnable(), LikelihoodHead::normal_fixed(0.7),
      LikelihoodHead::poisson(), LikelihoodHead::bernoulli()};
  for (Activation act : {Activation::tanh, Activation::relu}) {
    for (const auto& head : heads) {
      MlpArchitecture arch;
      arch.input_dim = 2;
      arch.hidden = {{6, act}, {5, act}};
      const SsrModel m(arch, 3, head);
      const Problem pr = make_problem(m, 20, 5);
      Vector params = m.init_params(2);
      if (m.has_log_sigma()) params[params.size() - 1] = -0.3;
      Vector g;
      const double ll = log_likelihood_grad(m, params, pr.slice(), g);
      CHECK(ll == doctest::Approx(log_likelihood(m, params, pr.slice())).epsilon(1e-12));
      const Vector fd = oracle::fd_gradient(
          [&](const Vector& v) { return log_likelihood(m, v, pr.slice()); }, params);
      INFO("family " << to_string(head.family) << " act " << to_string(act));
      CHECK(oracle::max_rel_err(g, fd) < 1e-4);
    }
  }
}

TEST_CASE("relu subgradient at zero is zero") {
  MlpArchitecture arch = MlpArchitecture::uniform(1, 1, 1);
  const SsrModel m(arch, 1, LikelihoodHead::normal_fixed(1.0));
  Vector params(5);
  params << 0.0, 1.0, 0.0, 1.0, 0.0;  // hidden pre-activation = u = 0
  Vector y(1), x(1);
  y << 1.0;
  x << 0.0;
  Matrix X(1, 1), U(1, 1);
  X << 0.0;
  U << 0.0;
  const Vector g = grad_log_likelihood(m, params, {y, X, U});
  CHECK(g[1] == 0.0);
  CHECK(g[3] == 0.0);
  CHECK(g[4] == doctest::Approx(1.0));
}

TEST_CASE("outcome validation and dimension checks") {
  const SsrModel pois(MlpArchitecture::uniform(1, 1, 2), 1, LikelihoodHead::poisson());
  Problem pr = make_problem(pois, 4, 1);
  const Vector params = pois.init_params(0);
  pr.y[2] = -1;
  CHECK_THROWS_AS(log_likelihood(pois, params, pr.slice()), InvalidOutcomeError);
  pr.y[2] = 1.5;
  CHECK_THROWS_AS(log_likelihood(pois, params, pr.slice()), InvalidOutcomeError);

  const SsrModel bern(MlpArchitecture::uniform(1, 1, 2), 1, LikelihoodHead::bernoulli());
  Vector y(2);
  y << 0, 2;
  try {
    validate_outcomes(bern.head(), y);
    FAIL("expected InvalidOutcomeError");
  } catch (const InvalidOutcomeError& e) {
    CHECK(e.row() == 1);
  }

  Problem ok = make_problem(pois, 4, 1);
  Matrix wide = Matrix::Zero(4, 2);
  CHECK_THROWS_AS(log_likelihood(pois, params, {ok.y, wide, ok.U}), DimensionError);
  CHECK_THROWS_AS(log_likelihood(pois, Vector::Zero(3), ok.slice()), DimensionError);
}

TEST_CASE("empty data has zero log likelihood") {
  const SsrModel m(MlpArchitecture::uniform(2, 1, 3), 2, LikelihoodHead::normal_learnable());
  Vector y(0);
  Matrix X(0, 2), U(0, 2);
  const Vector params = m.init_params(0);
  CHECK(log_likelihood(m, params, {y, X, U}) == 0.0);
  Vector g;
  CHECK(log_likelihood_grad(m, params, {y, X, U}, g) == 0.0);
  CHECK(g.isZero());
}

TEST_CASE("initialisation is seeded and bounded") {
  const SsrModel m(MlpArchitecture::uniform(4, 2, 16), 3, LikelihoodHead::normal_learnable());
  CHECK(m.init_params(9) == m.init_params(9));
  CHECK(m.init_params(9) != m.init_params(10));
  const Vector p = m.init_params(9);
  CHECK(p.head(3).cwiseAbs().maxCoeff() <= 1.0 / std::sqrt(3.0));
  CHECK(p.segment(3, 64).cwiseAbs().maxCoeff() <= std::sqrt(6.0 / 4.0));
  CHECK(p[p.size() - 1] == 0.0);
}
