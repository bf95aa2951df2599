#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "semisub/commands.hpp"
#include "semisub/io.hpp"

namespace {

using namespace semisub;

struct Globals {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::vector<std::string> set;

  RunConfig load() const {
    std::vector<std::string> overrides = set;
    if (seed) overrides.push_back("seed=" + std::to_string(*seed));
    RunConfig cfg = load_config(config, overrides);
    if (!out.empty()) cfg.out = out;
    return cfg;
  }
};

std::optional<std::filesystem::path> opt_path(const std::string& s) {
  if (s.empty()) return std::nullopt;
  return std::filesystem::path(s);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Bayesian semi-structured subspace inference"};
  app.require_subcommand(1);
  Globals g;
  app.add_option("--config", g.config, "JSON run config")->check(CLI::ExistingFile);
  app.add_option("--seed", g.seed, "Global seed");
  app.add_option("--out", g.out, "Output directory");
  app.add_option("--set", g.set, "Override, section.key=value")->take_all();

  int reps = 1;
  auto* sim = app.add_subcommand("simulate", "Write simulated datasets");
  sim->add_option("--reps", reps, "Number of datasets");

  std::string data_csv;
  bool naive = false;
  auto* train = app.add_subcommand("train-subspace", "Train the curve and its projection");
  train->add_option("--data", data_csv, "Dataset CSV");
  train->add_flag("--naive", naive, "Fold theta into the curve");

  std::string checkpoint, samples_path;
  bool full_space = false;
  std::optional<int> chains, keep;
  auto* sample = app.add_subcommand("sample", "Draw posterior samples");
  sample->add_option("--data", data_csv, "Dataset CSV");
  sample->add_option("--checkpoint", checkpoint, "Subspace checkpoint");
  sample->add_flag("--full-space", full_space, "HMC over all parameters");
  sample->add_flag("--naive", naive, "Sample a naive-mode checkpoint");
  sample->add_option("--chains", chains, "Number of chains");
  sample->add_option("--keep", keep, "Kept draws per chain");

  auto* evaluate = app.add_subcommand("evaluate", "Score samples on the test split");
  evaluate->add_option("--data", data_csv, "Dataset CSV");
  evaluate->add_option("--checkpoint", checkpoint, "Subspace checkpoint");
  evaluate->add_option("--samples", samples_path, "Samples CSV");

  bool timing = false;
  std::optional<int> study_reps;
  auto* study = app.add_subcommand("coverage-study", "Coverage and moment study");
  study->add_flag("--timing", timing, "Record per-epoch training time");
  study->add_option("--reps", study_reps, "Repetitions");

  CLI11_PARSE(app, argc, argv);

  try {
    RunConfig cfg = g.load();
    if (sim->parsed()) {
      cmd_simulate(cfg, reps);
      return kExitOk;
    }
    if (train->parsed()) {
      if (naive) cfg.subspace.train.scope = CurveScope::weights_and_theta;
      cmd_train_subspace(cfg, load_dataset(cfg, opt_path(data_csv)));
      return kExitOk;
    }
    const std::filesystem::path ck_path =
        checkpoint.empty() ? cfg.out / "subspace.json" : std::filesystem::path(checkpoint);
    if (sample->parsed()) {
      std::optional<SubspaceCheckpoint> ck;
      if (!full_space || std::filesystem::exists(ck_path)) ck = load_checkpoint(ck_path);
      SampleOptions o{full_space, naive, chains, keep};
      cmd_sample(cfg, ck ? &*ck : nullptr, load_dataset(cfg, opt_path(data_csv)), o);
      return kExitOk;
    }
    if (evaluate->parsed()) {
      const auto s = read_samples_csv(samples_path.empty() ? cfg.out / "samples.csv"
                                                           : std::filesystem::path(samples_path));
      std::optional<SubspaceCheckpoint> ck;
      if (s.kind != SpaceKind::full || !checkpoint.empty()) ck = load_checkpoint(ck_path);
      cmd_evaluate(cfg, s, ck ? &*ck : nullptr, load_dataset(cfg, opt_path(data_csv)));
      return kExitOk;
    }
    if (study->parsed()) return cmd_coverage_study(cfg, {timing, study_reps});
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitFailure;
  }
  return kExitFailure;
}
