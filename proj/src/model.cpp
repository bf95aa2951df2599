#include "semisub/model.hpp"

#include <cmath>
#include <numbers>
#include <random>
#include <sstream>

namespace semisub {

namespace {

using RowMajorMap =
    Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic,
                                   Eigen::RowMajor>>;
using RowMajorMutMap = Eigen::Map<
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

std::string dim_message(const std::string& what, std::size_t expected,
                        std::size_t actual) {
  std::ostringstream os;
  os << what << ": expected size " << expected << ", got " << actual;
  return os.str();
}

double softplus(double x) {
  return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

void apply_activation(Activation act, Matrix& z) {
  switch (act) {
    case Activation::relu:
      z = z.cwiseMax(0.0);
      break;
    case Activation::tanh:
      z = z.array().tanh().matrix();
      break;
  }
}

// Multiplies delta in place by the activation derivative, expressed through
// the post-activation value. ReLU uses derivative 0 at the kink.
void scale_by_activation_grad(Activation act, const Matrix& post,
                              Matrix& delta) {
  switch (act) {
    case Activation::relu:
      delta = (post.array() > 0.0).select(delta, 0.0);
      break;
    case Activation::tanh:
      delta.array() *= 1.0 - post.array().square();
      break;
  }
}

void check_data(const SsrModel& model, const DataSlice& data) {
  const auto n = data.rows();
  if (static_cast<std::size_t>(data.X.rows()) != n)
    throw DimensionError("structured feature rows", n, data.X.rows());
  if (static_cast<std::size_t>(data.U.rows()) != n)
    throw DimensionError("unstructured feature rows", n, data.U.rows());
  if (data.X.cols() != model.p())
    throw DimensionError("structured feature columns", model.p(),
                         data.X.cols());
  if (data.U.cols() != model.q())
    throw DimensionError("unstructured feature columns", model.q(),
                         data.U.cols());
}

void check_params(const SsrModel& model, const Vector& params) {
  if (static_cast<std::size_t>(params.size()) != model.num_params())
    throw DimensionError("flat parameter vector", model.num_params(),
                         params.size());
}

}  // namespace

DimensionError::DimensionError(const std::string& what, std::size_t expected,
                               std::size_t actual)
    : std::invalid_argument(dim_message(what, expected, actual)),
      expected_(expected),
      actual_(actual) {}

InvalidOutcomeError::InvalidOutcomeError(const std::string& what,
                                         std::size_t row)
    : std::invalid_argument(what + " (row " + std::to_string(row) + ")"),
      row_(row) {}

Activation activation_from_string(const std::string& s) {
  if (s == "relu") return Activation::relu;
  if (s == "tanh") return Activation::tanh;
  throw std::invalid_argument("unknown activation '" + s + "'");
}

std::string to_string(Activation a) {
  return a == Activation::relu ? "relu" : "tanh";
}

Family family_from_string(const std::string& s) {
  if (s == "normal") return Family::normal;
  if (s == "poisson") return Family::poisson;
  if (s == "bernoulli") return Family::bernoulli;
  throw std::invalid_argument("unknown likelihood family '" + s + "'");
}

std::string to_string(Family f) {
  switch (f) {
    case Family::normal:
      return "normal";
    case Family::poisson:
      return "poisson";
    case Family::bernoulli:
      return "bernoulli";
  }
  return "?";
}

int MlpArchitecture::fan_in(int layer) const {
  return layer == 0 ? input_dim : hidden[layer - 1].width;
}

int MlpArchitecture::fan_out(int layer) const {
  return layer < static_cast<int>(hidden.size()) ? hidden[layer].width
                                                 : output_dim;
}

std::size_t MlpArchitecture::offset(int layer) const {
  std::size_t off = 0;
  for (int l = 0; l < layer; ++l)
    off += static_cast<std::size_t>(fan_in(l) + 1) * fan_out(l);
  return off;
}

std::size_t MlpArchitecture::num_weights() const {
  return offset(num_layers());
}

void MlpArchitecture::validate() const {
  if (input_dim < 1)
    throw std::invalid_argument("network input dimension must be positive");
  for (const auto& h : hidden)
    if (h.width < 1)
      throw std::invalid_argument("hidden layer width must be positive");
}

MlpArchitecture MlpArchitecture::uniform(int input_dim, int depth, int width,
                                         Activation act) {
  MlpArchitecture a;
  a.input_dim = input_dim;
  a.hidden.assign(static_cast<std::size_t>(depth), HiddenLayer{width, act});
  return a;
}

void LikelihoodHead::validate() const {
  if (family == Family::normal && !learnable_dispersion &&
      !(fixed_sigma > 0 && std::isfinite(fixed_sigma)))
    throw std::invalid_argument("normal head requires sigma > 0");
}

LikelihoodHead LikelihoodHead::normal_fixed(double sigma) {
  return {Family::normal, false, sigma};
}
LikelihoodHead LikelihoodHead::normal_learnable() {
  return {Family::normal, true, 1.0};
}
LikelihoodHead LikelihoodHead::poisson() { return {Family::poisson, false, 1.0}; }
LikelihoodHead LikelihoodHead::bernoulli() {
  return {Family::bernoulli, false, 1.0};
}

SsrModel::SsrModel(MlpArchitecture arch, int p, LikelihoodHead head)
    : arch_(std::move(arch)), p_(p), head_(head) {
  arch_.validate();
  head_.validate();
  if (p_ < 0) throw std::invalid_argument("structured dimension must be >= 0");
  d_ = arch_.num_weights();
}

Vector SsrModel::init_weights(std::uint64_t seed) const {
  std::mt19937_64 rng(seed);
  Vector w(static_cast<Eigen::Index>(d_));
  for (int l = 0; l < arch_.num_layers(); ++l) {
    const int fi = arch_.fan_in(l), fo = arch_.fan_out(l);
    const double wb = std::sqrt(6.0 / fi);
    const double bb = 1.0 / std::sqrt(static_cast<double>(fi));
    std::uniform_real_distribution<double> wdist(-wb, wb), bdist(-bb, bb);
    auto off = static_cast<Eigen::Index>(arch_.offset(l));
    for (int i = 0; i < fo * fi; ++i) w[off++] = wdist(rng);
    for (int i = 0; i < fo; ++i) w[off++] = bdist(rng);
  }
  return w;
}

Vector SsrModel::init_params(std::uint64_t seed) const {
  Vector v = Vector::Zero(static_cast<Eigen::Index>(num_params()));
  // Separate stream for theta so w matches init_weights(seed).
  v.segment(weights_offset(), d_) = init_weights(seed);
  if (p_ > 0) {
    std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ULL);
    const double b = 1.0 / std::sqrt(static_cast<double>(p_));
    std::uniform_real_distribution<double> dist(-b, b);
    for (int i = 0; i < p_; ++i) v[i] = dist(rng);
  }
  return v;
}

FlatParams::FlatParams(const SsrModel& model, const Vector& values)
    : model_(&model), values_(&values) {
  check_params(model, values);
}

Eigen::Ref<const Vector> FlatParams::theta() const {
  return values_->segment(model_->theta_offset(), model_->p());
}

Eigen::Ref<const Vector> FlatParams::weights() const {
  return values_->segment(model_->weights_offset(), model_->d());
}

double FlatParams::sigma() const {
  if (model_->has_log_sigma())
    return std::exp((*values_)[model_->log_sigma_offset()]);
  return model_->head().fixed_sigma;
}

Vector mlp_forward(const MlpArchitecture& arch, std::span<const double> w,
                   const Matrix& U, MlpTape* tape) {
  if (w.size() != arch.num_weights())
    throw DimensionError("network weights", arch.num_weights(), w.size());
  if (U.cols() != arch.input_dim)
    throw DimensionError("network input", arch.input_dim, U.cols());
  if (tape) {
    tape->acts.clear();
    tape->acts.reserve(arch.hidden.size() + 1);
    tape->acts.push_back(U);
  }
  Matrix a = U;
  const int L = arch.num_layers();
  for (int l = 0; l < L; ++l) {
    const int fi = arch.fan_in(l), fo = arch.fan_out(l);
    const double* base = w.data() + arch.offset(l);
    RowMajorMap W(base, fo, fi);
    Eigen::Map<const Vector> b(base + static_cast<std::ptrdiff_t>(fo) * fi, fo);
    Matrix z = a * W.transpose();
    z.rowwise() += b.transpose();
    if (l + 1 < L) {
      apply_activation(arch.hidden[l].activation, z);
      if (tape) tape->acts.push_back(z);
    }
    a = std::move(z);
  }
  return a.col(0);
}

void mlp_backward(const MlpArchitecture& arch, std::span<const double> w,
                  const MlpTape& tape, const Vector& dout,
                  std::span<double> grad_w) {
  if (grad_w.size() != arch.num_weights())
    throw DimensionError("weight gradient", arch.num_weights(), grad_w.size());
  Matrix delta = dout;  // n x 1
  for (int l = arch.num_layers() - 1; l >= 0; --l) {
    const int fi = arch.fan_in(l), fo = arch.fan_out(l);
    const auto off = arch.offset(l);
    const Matrix& a_in = tape.acts[static_cast<std::size_t>(l)];
    RowMajorMutMap gW(grad_w.data() + off, fo, fi);
    Eigen::Map<Vector> gb(grad_w.data() + off + static_cast<std::size_t>(fo) * fi,
                          fo);
    gW.noalias() += delta.transpose() * a_in;
    gb += delta.colwise().sum().transpose();
    if (l > 0) {
      RowMajorMap W(w.data() + off, fo, fi);
      Matrix prev = delta * W;
      scale_by_activation_grad(arch.hidden[l - 1].activation, a_in, prev);
      delta = std::move(prev);
    }
  }
}

double predict_mu(const SsrModel& model, const Vector& params, const Vector& x,
                  const Vector& u) {
  check_params(model, params);
  if (x.size() != model.p())
    throw DimensionError("structured features", model.p(), x.size());
  if (u.size() != model.q())
    throw DimensionError("unstructured features", model.q(), u.size());
  FlatParams fp(model, params);
  const Matrix U = u.transpose();
  const auto wv = fp.weights();
  const Vector out = mlp_forward(model.arch(), {wv.data(), model.d()}, U);
  return x.dot(fp.theta()) + out[0];
}

Vector predict_mu(const SsrModel& model, const Vector& params,
                  const DataSlice& data) {
  check_params(model, params);
  check_data(model, data);
  FlatParams fp(model, params);
  const auto wv = fp.weights();
  Vector mu = mlp_forward(model.arch(), {wv.data(), model.d()}, data.U);
  if (model.p() > 0) mu += data.X * fp.theta();
  return mu;
}

double head_log_density(const LikelihoodHead& head, double y, double mu,
                        double sigma) {
  switch (head.family) {
    case Family::normal: {
      const double r = (y - mu) / sigma;
      return -0.5 * std::log(2.0 * std::numbers::pi) - std::log(sigma) -
             0.5 * r * r;
    }
    case Family::poisson:
      return y * mu - std::exp(mu) - std::lgamma(y + 1.0);
    case Family::bernoulli:
      return y * mu - softplus(mu);
  }
  return 0.0;
}

void validate_outcomes(const LikelihoodHead& head, const Vector& y) {
  for (Eigen::Index i = 0; i < y.size(); ++i) {
    const double v = y[i];
    const auto row = static_cast<std::size_t>(i);
    if (!std::isfinite(v)) throw InvalidOutcomeError("non-finite outcome", row);
    if (head.family == Family::poisson && (v < 0 || v != std::floor(v)))
      throw InvalidOutcomeError(
          "poisson outcome must be a non-negative integer", row);
    if (head.family == Family::bernoulli && v != 0.0 && v != 1.0)
      throw InvalidOutcomeError("bernoulli outcome must be 0 or 1", row);
  }
}

Vector pointwise_log_likelihood(const SsrModel& model, const Vector& params,
                                const DataSlice& data) {
  validate_outcomes(model.head(), data.y);
  const Vector mu = predict_mu(model, params, data);
  const double sigma = FlatParams(model, params).sigma();
  Vector out(mu.size());
  for (Eigen::Index i = 0; i < mu.size(); ++i)
    out[i] = head_log_density(model.head(), data.y[i], mu[i], sigma);
  return out;
}

double log_likelihood(const SsrModel& model, const Vector& params,
                      const DataSlice& data) {
  if (data.rows() == 0) {
    check_params(model, params);
    return 0.0;
  }
  return pointwise_log_likelihood(model, params, data).sum();
}

double log_likelihood_grad(const SsrModel& model, const Vector& params,
                           const DataSlice& data, Vector& grad) {
  check_params(model, params);
  check_data(model, data);
  validate_outcomes(model.head(), data.y);
  grad.setZero(static_cast<Eigen::Index>(model.num_params()));
  if (data.rows() == 0) return 0.0;

  FlatParams fp(model, params);
  const auto wv = fp.weights();
  std::span<const double> w{wv.data(), model.d()};
  MlpTape tape;
  Vector mu = mlp_forward(model.arch(), w, data.U, &tape);
  if (model.p() > 0) mu += data.X * fp.theta();

  const double sigma = fp.sigma();
  const auto& head = model.head();
  const Eigen::Index n = mu.size();
  Vector dmu(n);
  double ll = 0.0;
  double dlog_sigma = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const double y = data.y[i], m = mu[i];
    ll += head_log_density(head, y, m, sigma);
    switch (head.family) {
      case Family::normal: {
        const double r = (y - m) / sigma;
        dmu[i] = r / sigma;
        dlog_sigma += r * r - 1.0;
        break;
      }
      case Family::poisson:
        dmu[i] = y - std::exp(m);
        break;
      case Family::bernoulli:
        dmu[i] = y - sigmoid(m);
        break;
    }
  }

  if (model.p() > 0)
    grad.segment(model.theta_offset(), model.p()) = data.X.transpose() * dmu;
  mlp_backward(model.arch(), w, tape, dmu,
               {grad.data() + model.weights_offset(), model.d()});
  if (model.has_log_sigma()) grad[model.log_sigma_offset()] = dlog_sigma;
  return ll;
}

Vector grad_log_likelihood(const SsrModel& model, const Vector& params,
                           const DataSlice& data) {
  Vector g;
  log_likelihood_grad(model, params, data, g);
  return g;
}

}  // namespace semisub
