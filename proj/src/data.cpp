#include "semisub/data.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>

#include "semisub/io.hpp"

namespace semisub {

namespace {

// Training design for the toy problem: uniform over three disjoint intervals.
constexpr std::array<std::array<double, 2>, 3> kToyIntervals{
    {{-4.0, -2.0}, {-0.5, 0.5}, {2.0, 4.0}}};

double raw_trend(double u) { return u * u * u * std::cos(u); }

double toy_scale() {
  static const double scale = [] {
    // Midpoint quadrature of the mean and second moment over the design.
    double total = 0, m1 = 0, m2 = 0;
    constexpr int kSteps = 200000;
    for (const auto& iv : kToyIntervals) {
      const double h = (iv[1] - iv[0]) / kSteps;
      for (int i = 0; i < kSteps; ++i) {
        const double g = raw_trend(iv[0] + (i + 0.5) * h);
        m1 += g * h;
        m2 += g * g * h;
      }
      total += iv[1] - iv[0];
    }
    m1 /= total;
    m2 /= total;
    return std::sqrt(m2 - m1 * m1);
  }();
  return scale;
}

double sample_toy_u(std::mt19937_64& rng) {
  double total = 0;
  for (const auto& iv : kToyIntervals) total += iv[1] - iv[0];
  std::uniform_real_distribution<double> pos(0.0, total);
  double r = pos(rng);
  for (const auto& iv : kToyIntervals) {
    const double len = iv[1] - iv[0];
    if (r < len) return iv[0] + r;
    r -= len;
  }
  return kToyIntervals.back()[1];
}

std::vector<Split> make_split_labels(int n_train, int n_val, int n_test) {
  std::vector<Split> s;
  s.insert(s.end(), static_cast<std::size_t>(n_train), Split::train);
  s.insert(s.end(), static_cast<std::size_t>(n_val), Split::val);
  s.insert(s.end(), static_cast<std::size_t>(n_test), Split::test);
  return s;
}

Standardization fit_standardization(const Matrix& m,
                                    const std::vector<std::size_t>& rows,
                                    const std::string& what) {
  const Eigen::Index cols = m.cols();
  Standardization s = Standardization::identity(cols);
  if (rows.empty()) return s;
  for (Eigen::Index c = 0; c < cols; ++c) {
    double mean = 0;
    for (auto r : rows) mean += m(static_cast<Eigen::Index>(r), c);
    mean /= static_cast<double>(rows.size());
    double var = 0;
    for (auto r : rows) {
      const double dv = m(static_cast<Eigen::Index>(r), c) - mean;
      var += dv * dv;
    }
    var /= static_cast<double>(rows.size());
    s.mean[c] = mean;
    const double sd = std::sqrt(var);
    if (!(sd > 1e-12 * std::max(1.0, std::abs(mean)))) {
      warn(what + " column " + std::to_string(c) +
           " is constant on the training split; left unscaled");
      s.sd[c] = 1.0;
    } else {
      s.sd[c] = sd;
    }
  }
  return s;
}

nlohmann::json stats_json(const Standardization& s) {
  return {{"mean", std::vector<double>(s.mean.data(), s.mean.data() + s.mean.size())},
          {"sd", std::vector<double>(s.sd.data(), s.sd.data() + s.sd.size())}};
}

}  // namespace

std::string to_string(Split s) {
  switch (s) {
    case Split::train:
      return "train";
    case Split::val:
      return "val";
    case Split::test:
      return "test";
  }
  return "?";
}

Split split_from_string(const std::string& s) {
  if (s == "train" || s == "0") return Split::train;
  if (s == "val" || s == "valid" || s == "validation" || s == "1")
    return Split::val;
  if (s == "test" || s == "2") return Split::test;
  throw std::invalid_argument("unknown split label '" + s + "'");
}

Standardization Standardization::identity(Eigen::Index cols) {
  return {Vector::Zero(cols), Vector::Ones(cols)};
}

Matrix Standardization::apply(const Matrix& m) const {
  if (empty()) return m;
  Matrix out = m;
  for (Eigen::Index c = 0; c < m.cols(); ++c)
    out.col(c) = (m.col(c).array() - mean[c]) / sd[c];
  return out;
}

Matrix Standardization::invert(const Matrix& m) const {
  if (empty()) return m;
  Matrix out = m;
  for (Eigen::Index c = 0; c < m.cols(); ++c)
    out.col(c) = m.col(c).array() * sd[c] + mean[c];
  return out;
}

std::size_t Dataset::count(Split s) const {
  return static_cast<std::size_t>(std::count(split.begin(), split.end(), s));
}

Dataset Dataset::subset(const std::vector<std::size_t>& rows_idx) const {
  Dataset out;
  const auto n = static_cast<Eigen::Index>(rows_idx.size());
  out.y.resize(n);
  out.X.resize(n, X.cols());
  out.U.resize(n, U.cols());
  out.split.resize(rows_idx.size());
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto r = static_cast<Eigen::Index>(rows_idx[static_cast<std::size_t>(i)]);
    out.y[i] = y[r];
    out.X.row(i) = X.row(r);
    out.U.row(i) = U.row(r);
    out.split[static_cast<std::size_t>(i)] = split[static_cast<std::size_t>(r)];
  }
  out.u_stats = u_stats;
  out.y_stats = y_stats;
  return out;
}

Dataset Dataset::subset(Split s) const {
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < split.size(); ++i)
    if (split[i] == s) idx.push_back(i);
  return subset(idx);
}

void Dataset::validate() const {
  const auto n = rows();
  if (static_cast<std::size_t>(X.rows()) != n)
    throw DimensionError("dataset X rows", n, X.rows());
  if (static_cast<std::size_t>(U.rows()) != n)
    throw DimensionError("dataset U rows", n, U.rows());
  if (split.size() != n) throw DimensionError("dataset split labels", n, split.size());
  if (!y.allFinite() || !X.allFinite() || !U.allFinite())
    throw std::invalid_argument("dataset contains non-finite entries");
}

SimFamily sim_family_from_string(const std::string& s) {
  if (s == "toy_1d") return SimFamily::toy_1d;
  if (s == "sim_normal") return SimFamily::sim_normal;
  if (s == "sim_poisson") return SimFamily::sim_poisson;
  throw std::invalid_argument("unknown simulation family '" + s + "'");
}

std::string to_string(SimFamily f) {
  switch (f) {
    case SimFamily::toy_1d:
      return "toy_1d";
    case SimFamily::sim_normal:
      return "sim_normal";
    case SimFamily::sim_poisson:
      return "sim_poisson";
  }
  return "?";
}

void SimSpec::validate() const {
  if (n_train < 1 || n_val < 0 || n_test < 0)
    throw std::invalid_argument("simulation counts: n_train must be positive, "
                                "n_val and n_test non-negative");
  const int expected_p = family == SimFamily::toy_1d ? 2 : p;
  if (theta_star && theta_star->size() != expected_p)
    throw DimensionError("theta_star", expected_p, theta_star->size());
  if (family != SimFamily::toy_1d && (p < 1 || q < 1))
    throw std::invalid_argument("simulation p and q must be positive");
  if (!(noise_sd >= 0)) throw std::invalid_argument("noise_sd must be >= 0");
}

SimSpec SimSpec::toy(std::uint64_t seed) {
  SimSpec s;
  s.seed = seed;
  return s;
}

SimSpec SimSpec::simulation(SimFamily family, std::uint64_t seed) {
  SimSpec s;
  s.family = family;
  s.seed = seed;
  s.n_train = 100;
  s.n_val = 50;
  s.n_test = 200;
  return s;
}

double toy_trend(double u) { return raw_trend(u) / toy_scale(); }

double toy_mean(double u, const Vector& x, const Vector& theta) {
  return toy_trend(u) + x.dot(theta);
}

std::array<Vector, 3> toy_categories() {
  return {Vector::Zero(2), Vector::Unit(2, 0), Vector::Unit(2, 1)};
}

SimResult generate_toy(const SimSpec& spec) {
  spec.validate();
  if (spec.family != SimFamily::toy_1d)
    throw std::invalid_argument("generate_toy requires family toy_1d");
  const Vector theta =
      spec.theta_star ? *spec.theta_star : Vector{{-0.5, 1.0}};
  std::mt19937_64 rng(spec.seed);
  std::normal_distribution<double> noise(0.0, 1.0);
  std::uniform_int_distribution<int> cat(0, 2);
  const auto cats = toy_categories();

  const int n = spec.n_train + spec.n_val + spec.n_test;
  SimResult out;
  out.spec = spec;
  Dataset& d = out.data;
  d.y.resize(n);
  d.X.resize(n, 2);
  d.U.resize(n, 1);
  d.split = make_split_labels(spec.n_train, spec.n_val, spec.n_test);
  std::uniform_real_distribution<double> test_u(-4.0, 4.0);
  for (int i = 0; i < n; ++i) {
    const bool is_test = d.split[static_cast<std::size_t>(i)] == Split::test;
    const double u = (is_test && spec.toy_test_design == ToyTestDesign::uniform)
                         ? test_u(rng)
                         : sample_toy_u(rng);
    const Vector& x = cats[static_cast<std::size_t>(cat(rng))];
    d.U(i, 0) = u;
    d.X.row(i) = x.transpose();
    d.y[i] = toy_mean(u, x, theta) + spec.noise_sd * noise(rng);
  }
  d.u_stats = Standardization::identity(1);
  out.theta_star = theta;
  return out;
}

MlpArchitecture simulation_generator_arch(int q) {
  return MlpArchitecture::uniform(q, 2, 16, Activation::relu);
}

SimResult generate_simulation(const SimSpec& spec) {
  spec.validate();
  if (spec.family == SimFamily::toy_1d)
    throw std::invalid_argument("generate_simulation requires a sim_* family");
  SimResult out;
  out.spec = spec;
  out.generator_arch = simulation_generator_arch(spec.q);
  const SsrModel gen(out.generator_arch, spec.p,
                     spec.family == SimFamily::sim_normal
                         ? LikelihoodHead::normal_fixed(1.0)
                         : LikelihoodHead::poisson());

  std::normal_distribution<double> stdn(0.0, 1.0);
  // Generator network and theta* come from their own stream.
  std::mt19937_64 grng(spec.generator_seed.value_or(spec.seed * 7919 + 17));
  Vector w(static_cast<Eigen::Index>(gen.d()));
  for (int l = 0; l < out.generator_arch.num_layers(); ++l) {
    const double sd = 1.0 / std::sqrt(static_cast<double>(out.generator_arch.fan_in(l)));
    const auto off = static_cast<Eigen::Index>(out.generator_arch.offset(l));
    const int cnt = (out.generator_arch.fan_in(l) + 1) * out.generator_arch.fan_out(l);
    for (int i = 0; i < cnt; ++i) w[off + i] = sd * stdn(grng);
  }
  if (spec.zero_generator) w.setZero();
  Vector theta(spec.p);
  for (int i = 0; i < spec.p; ++i) theta[i] = stdn(grng);
  if (spec.theta_star) theta = *spec.theta_star;
  out.generator_weights = w;
  out.theta_star = theta;

  const int n = spec.n_train + spec.n_val + spec.n_test;
  std::mt19937_64 rng(spec.seed);
  Dataset& d = out.data;
  d.X.resize(n, spec.p);
  d.U.resize(n, spec.q);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < spec.q; ++j) d.U(i, j) = stdn(rng);
    for (int j = 0; j < spec.p; ++j) d.X(i, j) = stdn(rng);
  }
  d.split = make_split_labels(spec.n_train, spec.n_val, spec.n_test);
  d.u_stats = Standardization::identity(spec.q);

  const Vector f = mlp_forward(out.generator_arch, {w.data(), gen.d()}, d.U);
  const Vector eta = f + d.X * theta;
  d.y.resize(n);
  for (int i = 0; i < n; ++i) {
    if (spec.family == SimFamily::sim_normal) {
      d.y[i] = eta[i] + stdn(rng);
    } else {
      double e = eta[i];
      if (e > kPoissonClip || e < -kPoissonClip) {
        e = std::clamp(e, -kPoissonClip, kPoissonClip);
        ++out.n_clipped;
      }
      std::poisson_distribution<long long> pois(std::exp(e));
      d.y[i] = static_cast<double>(pois(rng));
    }
  }
  return out;
}

SimResult generate(const SimSpec& spec) {
  return spec.family == SimFamily::toy_1d ? generate_toy(spec)
                                          : generate_simulation(spec);
}

Dataset parse_dataset_csv(const std::string& text, const CsvSchema& schema) {
  const CsvTable t = parse_csv(text);
  auto require = [&](const std::string& name) {
    const int c = t.column(name);
    if (c < 0) throw std::invalid_argument("csv: missing column '" + name + "'");
    return c;
  };
  auto prefixed = [&](const std::string& prefix) {
    std::vector<std::string> cols;
    for (const auto& h : t.header)
      if (h.rfind(prefix, 0) == 0) cols.push_back(h);
    return cols;
  };
  const int ycol = require(schema.y);
  const auto xnames = schema.x.empty() ? prefixed("x_") : schema.x;
  const auto unames = schema.u.empty() ? prefixed("u_") : schema.u;
  std::vector<int> xcols, ucols;
  for (const auto& nme : xnames) xcols.push_back(require(nme));
  for (const auto& nme : unames) ucols.push_back(require(nme));
  if (ucols.empty())
    throw std::invalid_argument("csv: no unstructured (u) columns");
  const int scol = schema.split_column.empty() ? -1 : t.column(schema.split_column);

  const auto n = static_cast<Eigen::Index>(t.rows.size());
  if (n == 0) throw std::invalid_argument("csv: no data rows");
  Dataset d;
  d.y.resize(n);
  d.X.resize(n, static_cast<Eigen::Index>(xcols.size()));
  d.U.resize(n, static_cast<Eigen::Index>(ucols.size()));
  auto cell = [&](Eigen::Index r, int c) {
    const auto& s = t.rows[static_cast<std::size_t>(r)][static_cast<std::size_t>(c)];
    try {
      const double v = parse_double(s);
      if (!std::isfinite(v)) throw std::invalid_argument("non-finite");
      return v;
    } catch (const std::invalid_argument&) {
      throw std::invalid_argument("csv: row " + std::to_string(r + 1) +
                                  ", column '" + t.header[static_cast<std::size_t>(c)] +
                                  "': not a finite number: '" + s + "'");
    }
  };
  for (Eigen::Index r = 0; r < n; ++r) {
    d.y[r] = cell(r, ycol);
    for (std::size_t j = 0; j < xcols.size(); ++j)
      d.X(r, static_cast<Eigen::Index>(j)) = cell(r, xcols[j]);
    for (std::size_t j = 0; j < ucols.size(); ++j)
      d.U(r, static_cast<Eigen::Index>(j)) = cell(r, ucols[j]);
  }

  d.split.resize(static_cast<std::size_t>(n));
  if (scol >= 0) {
    for (Eigen::Index r = 0; r < n; ++r)
      d.split[static_cast<std::size_t>(r)] = split_from_string(
          t.rows[static_cast<std::size_t>(r)][static_cast<std::size_t>(scol)]);
  } else {
    const auto& f = schema.fractions;
    if (std::abs(f[0] + f[1] + f[2] - 1.0) > 1e-9 || f[0] < 0 || f[1] < 0 || f[2] < 0)
      throw std::invalid_argument("split fractions must be non-negative and sum to 1");
    std::vector<std::size_t> perm(static_cast<std::size_t>(n));
    std::iota(perm.begin(), perm.end(), 0);
    std::mt19937_64 rng(schema.seed);
    std::shuffle(perm.begin(), perm.end(), rng);
    const auto n_train = static_cast<std::size_t>(std::llround(f[0] * n));
    const auto n_val = std::min(perm.size() - n_train,
                                static_cast<std::size_t>(std::llround(f[1] * n)));
    for (std::size_t i = 0; i < perm.size(); ++i)
      d.split[perm[i]] = i < n_train ? Split::train
                         : i < n_train + n_val ? Split::val
                                               : Split::test;
  }

  std::vector<std::size_t> train_rows;
  for (std::size_t i = 0; i < d.split.size(); ++i)
    if (d.split[i] == Split::train) train_rows.push_back(i);
  if (schema.standardize_u) {
    d.u_stats = fit_standardization(d.U, train_rows, "u");
    d.U = d.u_stats.apply(d.U);
  } else {
    d.u_stats = Standardization::identity(d.U.cols());
  }
  if (schema.standardize_y) {
    Matrix ym = d.y;
    auto ys = fit_standardization(ym, train_rows, "y");
    d.y = ys.apply(ym).col(0);
    d.y_stats = ys;
  }
  d.validate();
  return d;
}

Dataset load_csv(const std::filesystem::path& path, const CsvSchema& schema) {
  return parse_dataset_csv(read_text_file(path), schema);
}

std::string dataset_to_csv(const Dataset& data) {
  data.validate();
  std::ostringstream os;
  os << "y";
  for (int j = 0; j < data.p(); ++j) os << ",x_" << j + 1;
  for (int j = 0; j < data.q(); ++j) os << ",u_" << j + 1;
  os << ",split\n";
  for (Eigen::Index i = 0; i < data.y.size(); ++i) {
    os << format_double(data.y[i]);
    for (int j = 0; j < data.p(); ++j) os << ',' << format_double(data.X(i, j));
    for (int j = 0; j < data.q(); ++j) os << ',' << format_double(data.U(i, j));
    os << ',' << to_string(data.split[static_cast<std::size_t>(i)]) << '\n';
  }
  return os.str();
}

void save_csv(const Dataset& data, const std::filesystem::path& path) {
  write_file_atomic(path, dataset_to_csv(data));
}

nlohmann::json sim_sidecar(const SimResult& sim) {
  nlohmann::json j;
  j["seed"] = sim.spec.seed;
  j["family"] = to_string(sim.spec.family);
  j["theta_star"] = std::vector<double>(sim.theta_star.data(),
                                        sim.theta_star.data() + sim.theta_star.size());
  j["n_train"] = sim.spec.n_train;
  j["n_val"] = sim.spec.n_val;
  j["n_test"] = sim.spec.n_test;
  if (sim.spec.family == SimFamily::toy_1d) {
    j["generator"] = {{"trend", "u^3 cos(u) / scale"},
                      {"noise_sd", sim.spec.noise_sd},
                      {"test_design", sim.spec.toy_test_design == ToyTestDesign::uniform
                                          ? "uniform"
                                          : "clusters"}};
  } else {
    nlohmann::json hidden = nlohmann::json::array();
    for (const auto& h : sim.generator_arch.hidden)
      hidden.push_back({{"width", h.width}, {"activation", to_string(h.activation)}});
    j["generator"] = {
        {"arch", {{"input_dim", sim.generator_arch.input_dim}, {"hidden", hidden}}},
        {"seed", sim.spec.generator_seed.value_or(sim.spec.seed * 7919 + 17)},
        {"weight_init", "N(0, 1/fan_in)"}};
    if (sim.spec.family == SimFamily::sim_poisson)
      j["poisson_clip"] = {{"low", -kPoissonClip},
                           {"high", kPoissonClip},
                           {"n_clipped", sim.n_clipped}};
  }
  j["standardization"] = {{"u", stats_json(sim.data.u_stats)}};
  if (sim.data.y_stats) j["standardization"]["y"] = stats_json(*sim.data.y_stats);
  return j;
}

}  // namespace semisub
