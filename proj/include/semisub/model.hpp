#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace semisub {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

class DimensionError : public std::invalid_argument {
 public:
  DimensionError(const std::string& what, std::size_t expected,
                 std::size_t actual);
  std::size_t expected() const { return expected_; }
  std::size_t actual() const { return actual_; }

 private:
  std::size_t expected_;
  std::size_t actual_;
};

/// Raised when an outcome value is not in the support of the likelihood
/// family (negative count, non-binary label, ...).
class InvalidOutcomeError : public std::invalid_argument {
 public:
  InvalidOutcomeError(const std::string& what, std::size_t row);
  std::size_t row() const { return row_; }

 private:
  std::size_t row_;
};

enum class Activation { relu, tanh };

Activation activation_from_string(const std::string& s);
std::string to_string(Activation a);

struct HiddenLayer {
  int width = 16;
  Activation activation = Activation::relu;
};

/// Fully connected network mapping R^q to R. The flat weight vector stores
/// layers in order; within a layer the (fan_out x fan_in) weight matrix comes
/// first in row-major order, followed by the fan_out biases.
struct MlpArchitecture {
  int input_dim = 1;
  std::vector<HiddenLayer> hidden;

  static constexpr int output_dim = 1;

  int num_layers() const { return static_cast<int>(hidden.size()) + 1; }
  int fan_in(int layer) const;
  int fan_out(int layer) const;
  /// Offset of layer `layer`'s weight matrix in the flat vector.
  std::size_t offset(int layer) const;
  std::size_t num_weights() const;
  void validate() const;

  static MlpArchitecture uniform(int input_dim, int depth, int width,
                                 Activation act = Activation::relu);
};

enum class Family { normal, poisson, bernoulli };

Family family_from_string(const std::string& s);
std::string to_string(Family f);

struct LikelihoodHead {
  Family family = Family::normal;
  // Only meaningful for the normal family.
  bool learnable_dispersion = true;
  double fixed_sigma = 1.0;

  bool has_dispersion_param() const {
    return family == Family::normal && learnable_dispersion;
  }
  void validate() const;

  static LikelihoodHead normal_fixed(double sigma);
  static LikelihoodHead normal_learnable();
  static LikelihoodHead poisson();
  static LikelihoodHead bernoulli();
};

/// Rows of a regression problem. Row i is (y_i, X.row(i), U.row(i)).
struct DataSlice {
  const Vector& y;
  const Matrix& X;
  const Matrix& U;
  std::size_t rows() const { return static_cast<std::size_t>(y.size()); }
};

/// Semi-structured regression model: mu = x'theta + mlp_w(u).
///
/// Flat parameter layout is [theta (p) | w (d) | log_sigma (0 or 1)].
class SsrModel {
 public:
  SsrModel(MlpArchitecture arch, int p, LikelihoodHead head);

  const MlpArchitecture& arch() const { return arch_; }
  const LikelihoodHead& head() const { return head_; }
  int p() const { return p_; }
  int q() const { return arch_.input_dim; }
  std::size_t d() const { return d_; }
  std::size_t num_params() const {
    return static_cast<std::size_t>(p_) + d_ + (has_log_sigma() ? 1 : 0);
  }
  bool has_log_sigma() const { return head_.has_dispersion_param(); }

  std::size_t theta_offset() const { return 0; }
  std::size_t weights_offset() const { return static_cast<std::size_t>(p_); }
  std::size_t log_sigma_offset() const { return p_ + d_; }

  /// Random initial parameters: weights U(-sqrt(6/fan_in), sqrt(6/fan_in)),
  /// biases U(-1/sqrt(fan_in), 1/sqrt(fan_in)), theta U(-1/sqrt(p), 1/sqrt(p)),
  /// log_sigma = 0.
  Vector init_params(std::uint64_t seed) const;
  Vector init_weights(std::uint64_t seed) const;

 private:
  MlpArchitecture arch_;
  int p_;
  LikelihoodHead head_;
  std::size_t d_;
};

/// Read-only segmented view over a flat parameter vector.
class FlatParams {
 public:
  FlatParams(const SsrModel& model, const Vector& values);

  const Vector& values() const { return *values_; }
  Eigen::Ref<const Vector> theta() const;
  Eigen::Ref<const Vector> weights() const;
  /// Dispersion of the normal head; fixed value when not learnable.
  double sigma() const;

 private:
  const SsrModel* model_;
  const Vector* values_;
};

/// Activations kept by the forward pass for the reverse sweep. acts[0] is the
/// input batch, acts[l] the post-activation output of hidden layer l.
struct MlpTape {
  std::vector<Matrix> acts;
};

/// Network output for every row of U given flat network weights.
Vector mlp_forward(const MlpArchitecture& arch, std::span<const double> w,
                   const Matrix& U, MlpTape* tape = nullptr);

/// Reverse sweep: accumulates d(sum_i dout_i * mlp(u_i))/dw into grad_w.
void mlp_backward(const MlpArchitecture& arch, std::span<const double> w,
                  const MlpTape& tape, const Vector& dout,
                  std::span<double> grad_w);

double predict_mu(const SsrModel& model, const Vector& params,
                  const Vector& x, const Vector& u);
Vector predict_mu(const SsrModel& model, const Vector& params,
                  const DataSlice& data);

/// Log density of every row under the head evaluated at mu.
Vector pointwise_log_likelihood(const SsrModel& model, const Vector& params,
                                const DataSlice& data);
double log_likelihood(const SsrModel& model, const Vector& params,
                      const DataSlice& data);
/// Returns the log likelihood; writes the gradient over all flat params.
double log_likelihood_grad(const SsrModel& model, const Vector& params,
                           const DataSlice& data, Vector& grad);
Vector grad_log_likelihood(const SsrModel& model, const Vector& params,
                           const DataSlice& data);

/// Checks every outcome against the head's support.
void validate_outcomes(const LikelihoodHead& head, const Vector& y);

/// Head-level scalar helpers, shared with diagnostics.
double head_log_density(const LikelihoodHead& head, double y, double mu,
                        double sigma);

}  // namespace semisub
