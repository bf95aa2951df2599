#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"

#include "semisub/data.hpp"
#include "semisub/inference.hpp"
#include "semisub/model.hpp"
#include "semisub/subspace.hpp"

namespace semisub {

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct ModelSection {
  std::vector<int> hidden{16, 16};
  Activation activation = Activation::relu;
  LikelihoodHead head;

  /// Architecture for `q` inputs.
  MlpArchitecture arch(int q) const;
};

struct SubspaceSection {
  int k = 2;
  TrainConfig train;
};

struct InferenceSection {
  SamplerConfig sampler;
  PriorSpec prior;
  FullSpaceOptions full_space;
  /// Step size and trajectory length for full-space HMC; the rest of the
  /// HMC settings are shared with subspace sampling.
  double full_step_size = 0.01;
  int full_n_leapfrog = 50;
};

struct CsvSource {
  std::filesystem::path path;
  CsvSchema schema;
};

struct DataSection {
  std::optional<SimSpec> simulation;
  std::optional<CsvSource> csv;
};

enum class StudyMode { pipeline, self_calibrated };

struct StudySection {
  int reps = 2;
  std::vector<int> k_grid{2};
  std::vector<double> alphas = default_alphas();
  /// Parameters whose draws enter the coverage table.
  std::vector<std::string> params{"theta_1"};
  bool full_space = true;
  StudyMode mode = StudyMode::pipeline;

  static std::vector<double> default_alphas();
};

struct EvaluateSection {
  double hdi_mass = 0.95;
};

struct RunConfig {
  std::uint64_t seed = 0;
  std::filesystem::path out = "out";
  ModelSection model;
  SubspaceSection subspace;
  InferenceSection inference;
  DataSection data;
  StudySection study;
  EvaluateSection evaluate;

  /// Throws ConfigError.
  void validate() const;
};

/// Applies `section.key=value` overrides to a raw config document. The value
/// is parsed as JSON when possible and kept as a string otherwise.
void apply_override(nlohmann::json& doc, const std::string& assignment);

/// Strict parse: unknown keys and wrongly typed values throw ConfigError.
RunConfig parse_config(const nlohmann::json& doc);
RunConfig load_config(const std::filesystem::path& path,
                      const std::vector<std::string>& overrides = {});
nlohmann::json config_to_json(const RunConfig& cfg);

}  // namespace semisub
