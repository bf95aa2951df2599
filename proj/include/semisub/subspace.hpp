#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"

#include "semisub/data.hpp"
#include "semisub/model.hpp"

namespace semisub {

class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DegenerateSubspaceError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Which parameters the curve moves. `weights` is the semi-structured
/// construction (theta trained in its own full space); `weights_and_theta`
/// folds theta into the curve as in naive subspace inference.
enum class CurveScope { weights, weights_and_theta };

/// k+1 control points stored as rows of a (k+1) x D matrix.
struct ControlPoints {
  Matrix points;

  int k() const { return static_cast<int>(points.rows()) - 1; }
  Eigen::Index dim() const { return points.cols(); }
  void validate() const;
};

/// Bernstein basis weights C(k,l) (1-t)^(k-l) t^l, l = 0..k.
Vector bernstein_weights(int k, double t);
Vector bezier_eval(const ControlPoints& cp, double t);

struct TrainConfig {
  double learning_rate = 0.0025;
  double weight_decay = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  int max_epochs = 1000;
  /// <= 0 means full batch.
  int batch_size = 0;
  /// Fraction of training rows held out when the dataset has no val split.
  double val_fraction = 0.0;
  bool early_selection = true;
  /// Curve position where validation loss is tracked.
  double val_t = 0.5;
  std::uint64_t seed = 0;
  CurveScope scope = CurveScope::weights;
  bool record_timing = false;

  void validate() const;
};

struct EpochStats {
  int epoch = 0;
  double train_loss = 0;  // mean minibatch NLL at the sampled t
  double val_nll = 0;     // mean NLL at val_t
  double seconds = 0;
};

struct TrainResult {
  ControlPoints control_points;
  Vector theta_star;
  std::optional<double> log_sigma_star;
  int best_epoch = 0;
  double train_nll = 0;
  double val_nll = 0;
  std::vector<EpochStats> history;
  CurveScope scope = CurveScope::weights;
};

/// Single-stage Bezier curve training. Each minibatch draws t ~ U(0,1),
/// evaluates the mean NLL at w = b(t) and takes one Adam step on all control
/// points jointly with theta (and log sigma when learnable). The snapshot with
/// the lowest validation NLL at val_t is returned.
TrainResult train_subspace(const SsrModel& model, const Dataset& data, int k,
                           const TrainConfig& cfg);

/// Mean NLL of the full training split at curve position t.
double curve_loss(const SsrModel& model, const Dataset& data,
                  const TrainResult& trained, double t, Split split = Split::train);

/// Flat model parameters at curve position t.
Vector curve_params(const SsrModel& model, const TrainResult& trained, double t);

struct BezierSubspace {
  Vector mean;        // D
  Matrix projection;  // D x k, orthonormal (zero columns past the rank)
  ControlPoints control_points;
  Vector theta_star;
  std::optional<double> log_sigma_star;
  Vector singular_values;
  int rank = 0;
  CurveScope scope = CurveScope::weights;

  int k() const { return static_cast<int>(projection.cols()); }
  Eigen::Index dim() const { return mean.size(); }
};

/// PCA of the centered control points via thin SVD. Column signs are fixed
/// so each column's largest-magnitude entry is positive.
BezierSubspace build_projection(const ControlPoints& cp);
BezierSubspace build_projection(const TrainResult& trained);

/// w = mean + projection * phi.
Vector phi_to_weights(const BezierSubspace& sub, const Vector& phi);
/// Least-squares coordinates of a point: projection^T (w - mean).
Vector weights_to_phi(const BezierSubspace& sub, const Vector& w);

struct SubspaceCheckpoint {
  BezierSubspace subspace;
  MlpArchitecture arch;
  int p = 0;
  LikelihoodHead head;
  std::uint64_t seed = 0;
  int best_epoch = 0;
  double train_nll = 0;
  double val_nll = 0;

  SsrModel model() const { return SsrModel(arch, p, head); }
};

nlohmann::json arch_to_json(const MlpArchitecture& arch);
MlpArchitecture arch_from_json(const nlohmann::json& j);
nlohmann::json head_to_json(const LikelihoodHead& head);
LikelihoodHead head_from_json(const nlohmann::json& j);

nlohmann::json checkpoint_to_json(const SubspaceCheckpoint& ckpt);
SubspaceCheckpoint checkpoint_from_json(const nlohmann::json& j);
void save_checkpoint(const SubspaceCheckpoint& ckpt,
                     const std::filesystem::path& path);
SubspaceCheckpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace semisub
