#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "semisub/config.hpp"
#include "semisub/diagnostics.hpp"

namespace semisub {

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitNumeric = 3;
inline constexpr int kExitPartial = 4;

/// Dataset from `csv` when given (read with the configured schema, or the
/// default one), otherwise from the configured data source.
Dataset load_dataset(const RunConfig& cfg,
                     const std::optional<std::filesystem::path>& csv = std::nullopt);

SsrModel make_model(const RunConfig& cfg, const Dataset& data);

/// Writes sim_rep<r>.csv and sim_rep<r>.json for r < reps, seeded with
/// simulation seed + r. Returns the written paths.
std::vector<std::filesystem::path> cmd_simulate(const RunConfig& cfg, int reps);

SubspaceCheckpoint train_checkpoint(const RunConfig& cfg, const Dataset& data);
/// Trains and writes <out>/subspace.json.
SubspaceCheckpoint cmd_train_subspace(const RunConfig& cfg, const Dataset& data);

struct SampleOptions {
  bool full_space = false;
  /// Requires a checkpoint trained with the naive curve scope.
  bool naive = false;
  std::optional<int> chains;
  std::optional<int> keep;
};

/// Full-space sampling uses the checkpoint (when given) only for its start
/// point.
PosteriorSamples run_sampler(const RunConfig& cfg, const SubspaceCheckpoint* ckpt,
                             const Dataset& data, const SampleOptions& opts);
/// Samples, writes <out>/samples.csv and prints a per-chain summary.
PosteriorSamples cmd_sample(const RunConfig& cfg, const SubspaceCheckpoint* ckpt,
                            const Dataset& data, const SampleOptions& opts);

/// Scores the test split and writes <out>/report.json and <out>/bands.csv.
DiagnosticsReport cmd_evaluate(const RunConfig& cfg, const PosteriorSamples& samples,
                               const SubspaceCheckpoint* ckpt, const Dataset& data);

struct StudyCoverageRow {
  std::string method;  // "semi_k<k>" or "full"
  int k = 0;           // 0 for full space
  std::string param;
  CoverageRow row;
};

struct MomentDiffRow {
  int rep = 0;
  int k = 0;
  std::string param;
  int moment = 0;
  double subspace = 0;
  double full = 0;
  double diff() const { return subspace - full; }
};

struct TimingRow {
  int rep = 0;
  int k = 0;
  int epoch = 0;
  double seconds = 0;
};

struct RepStatus {
  int rep = 0;
  std::string method;
  bool ok = true;
  std::string message;
};

struct StudyResult {
  std::vector<StudyCoverageRow> coverage;
  std::vector<MomentDiffRow> moment_diffs;
  std::vector<TimingRow> timing;
  std::vector<RepStatus> status;

  bool any_failure() const;
  std::string coverage_csv() const;
  std::string moment_diff_csv() const;
  std::string timing_csv() const;
  std::string status_csv() const;
};

struct StudyOptions {
  bool timing = false;
  std::optional<int> reps;
};

/// Repetitions x (k grid + full-space oracle) on simulated data, or the
/// self-calibrated check where truth and draws share one normal law.
StudyResult run_coverage_study(const RunConfig& cfg, const StudyOptions& opts = {});
/// Runs the study and writes coverage.csv, moment_diff.csv, status.csv and,
/// with timing, timing.csv. Returns an exit code.
int cmd_coverage_study(const RunConfig& cfg, const StudyOptions& opts = {});

}  // namespace semisub
