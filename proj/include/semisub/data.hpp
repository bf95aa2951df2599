#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "semisub/model.hpp"

namespace semisub {

enum class Split : std::uint8_t { train, val, test };

std::string to_string(Split s);
Split split_from_string(const std::string& s);

/// Per-column affine standardization (x - mean) / sd. Population sd of the
/// training rows; constant columns keep sd = 1.
struct Standardization {
  Vector mean;
  Vector sd;

  static Standardization identity(Eigen::Index cols);
  bool empty() const { return mean.size() == 0; }
  Matrix apply(const Matrix& m) const;
  Matrix invert(const Matrix& m) const;
};

struct Dataset {
  Vector y;
  Matrix X;  // n x p structured features
  Matrix U;  // n x q unstructured features
  std::vector<Split> split;
  Standardization u_stats;
  std::optional<Standardization> y_stats;

  std::size_t rows() const { return static_cast<std::size_t>(y.size()); }
  int p() const { return static_cast<int>(X.cols()); }
  int q() const { return static_cast<int>(U.cols()); }
  std::size_t count(Split s) const;

  DataSlice slice() const { return {y, X, U}; }
  Dataset subset(Split s) const;
  Dataset subset(const std::vector<std::size_t>& rows) const;
  /// Throws on inconsistent row counts or non-finite entries.
  void validate() const;
};

enum class SimFamily { toy_1d, sim_normal, sim_poisson };

SimFamily sim_family_from_string(const std::string& s);
std::string to_string(SimFamily f);

enum class ToyTestDesign { uniform, clusters };

struct SimSpec {
  SimFamily family = SimFamily::toy_1d;
  int n_train = 35;
  int n_val = 0;
  int n_test = 365;
  std::uint64_t seed = 0;
  /// Defaults to (-0.5, 1) for the toy family, drawn N(0, 1) for simulations.
  std::optional<Vector> theta_star;
  std::optional<std::uint64_t> generator_seed;
  /// Toy observation noise.
  double noise_sd = 0.1;
  ToyTestDesign toy_test_design = ToyTestDesign::clusters;
  /// Simulation input dims.
  int q = 4;
  int p = 3;
  /// Testing aid: all generator weights set to zero.
  bool zero_generator = false;

  void validate() const;
  static SimSpec toy(std::uint64_t seed = 0);
  static SimSpec simulation(SimFamily family, std::uint64_t seed = 0);
};

struct SimResult {
  Dataset data;
  Vector theta_star;
  MlpArchitecture generator_arch;
  Vector generator_weights;
  /// Number of poisson linear predictors clipped into [-10, 10].
  std::size_t n_clipped = 0;
  SimSpec spec;
};

inline constexpr double kPoissonClip = 10.0;

/// Nonlinear toy trend u^3 cos(u), rescaled to unit sd over the training
/// design.
double toy_trend(double u);
/// Expected toy outcome for a given (u, x).
double toy_mean(double u, const Vector& x, const Vector& theta);
/// Category vectors of the toy problem: (0,0), (1,0), (0,1).
std::array<Vector, 3> toy_categories();

SimResult generate_toy(const SimSpec& spec);
SimResult generate_simulation(const SimSpec& spec);
/// Dispatches on spec.family.
SimResult generate(const SimSpec& spec);

/// Ground-truth generator network for the simulation families.
MlpArchitecture simulation_generator_arch(int q);

struct CsvSchema {
  std::string y = "y";
  /// Empty: every column prefixed "x_" (resp. "u_").
  std::vector<std::string> x;
  std::vector<std::string> u;
  /// Column with train/val/test labels; used when present in the file.
  std::string split_column = "split";
  std::array<double, 3> fractions{1.0, 0.0, 0.0};
  std::uint64_t seed = 0;
  bool standardize_u = true;
  bool standardize_y = false;
};

Dataset load_csv(const std::filesystem::path& path, const CsvSchema& schema);
Dataset parse_dataset_csv(const std::string& text, const CsvSchema& schema);

/// Columns y, x_1..x_p, u_1..u_q, split.
std::string dataset_to_csv(const Dataset& data);
void save_csv(const Dataset& data, const std::filesystem::path& path);

nlohmann::json sim_sidecar(const SimResult& sim);

}  // namespace semisub
