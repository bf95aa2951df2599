#include "semisub/commands.hpp"

#include <algorithm>
#include <cstdio>
#include <iostream>
#include <random>
#include <sstream>

#include "semisub/io.hpp"

namespace semisub {

namespace fs = std::filesystem;

namespace {

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (a + 1) + 0xbf58476d1ce4e5b9ULL * (b + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir))
    throw std::runtime_error("cannot create output directory " + dir.string());
}

std::string pad(int r) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%03d", r);
  return buf;
}

int theta_column(const std::string& param, int p) {
  if (param.rfind("theta_", 0) != 0)
    throw ConfigError("study.params entries must be theta_<j>, got " + param);
  int j = 0;
  try {
    j = std::stoi(param.substr(6));
  } catch (const std::exception&) {
    throw ConfigError("bad parameter name " + param);
  }
  if (j < 1 || j > p) throw ConfigError("parameter " + param + " is out of range");
  return j - 1;
}

const char* moment_name(int m) {
  static const char* names[] = {"mean", "sd", "skewness", "excess_kurtosis"};
  return names[m - 1];
}

}  // namespace

Dataset load_dataset(const RunConfig& cfg, const std::optional<fs::path>& csv) {
  if (csv) {
    const CsvSchema schema = cfg.data.csv ? cfg.data.csv->schema : CsvSchema{};
    return load_csv(*csv, schema);
  }
  if (cfg.data.csv) return load_csv(cfg.data.csv->path, cfg.data.csv->schema);
  if (cfg.data.simulation) return generate(*cfg.data.simulation).data;
  throw ConfigError("no data source configured");
}

SsrModel make_model(const RunConfig& cfg, const Dataset& data) {
  return SsrModel(cfg.model.arch(data.q()), data.p(), cfg.model.head);
}

std::vector<fs::path> cmd_simulate(const RunConfig& cfg, int reps) {
  if (!cfg.data.simulation) throw ConfigError("simulate needs data.simulation");
  if (reps < 0) throw ConfigError("--reps must be >= 0");
  std::vector<fs::path> written;
  if (reps == 0) {
    warn("simulate: reps = 0, nothing written");
    return written;
  }
  ensure_dir(cfg.out);
  for (int r = 0; r < reps; ++r) {
    SimSpec spec = *cfg.data.simulation;
    spec.seed += static_cast<std::uint64_t>(r);
    const SimResult sim = generate(spec);
    const fs::path csv = cfg.out / ("sim_rep" + pad(r) + ".csv");
    const fs::path side = cfg.out / ("sim_rep" + pad(r) + ".json");
    save_csv(sim.data, csv);
    write_file_atomic(side, sim_sidecar(sim).dump(2) + "\n");
    written.push_back(csv);
    written.push_back(side);
  }
  return written;
}

SubspaceCheckpoint train_checkpoint(const RunConfig& cfg, const Dataset& data) {
  const SsrModel model = make_model(cfg, data);
  const TrainResult tr = train_subspace(model, data, cfg.subspace.k, cfg.subspace.train);
  SubspaceCheckpoint ck;
  ck.subspace = build_projection(tr);
  ck.arch = model.arch();
  ck.p = model.p();
  ck.head = model.head();
  ck.seed = cfg.seed;
  ck.best_epoch = tr.best_epoch;
  ck.train_nll = tr.train_nll;
  ck.val_nll = tr.val_nll;
  return ck;
}

SubspaceCheckpoint cmd_train_subspace(const RunConfig& cfg, const Dataset& data) {
  ensure_dir(cfg.out);
  SubspaceCheckpoint ck = train_checkpoint(cfg, data);
  save_checkpoint(ck, cfg.out / "subspace.json");
  std::cout << "selected epoch " << ck.best_epoch << ", train nll " << format_double(ck.train_nll)
            << ", val nll " << format_double(ck.val_nll) << ", rank " << ck.subspace.rank << "/"
            << ck.subspace.k() << "\n";
  return ck;
}

PosteriorSamples run_sampler(const RunConfig& cfg, const SubspaceCheckpoint* ckpt,
                             const Dataset& data, const SampleOptions& opts) {
  const SsrModel model = ckpt ? ckpt->model() : make_model(cfg, data);
  if (model.q() != data.q() || model.p() != data.p())
    throw ConfigError("checkpoint dimensions do not match the data");
  SamplerConfig sc = cfg.inference.sampler;
  if (opts.chains) sc.hmc.n_chains = sc.ess.n_chains = *opts.chains;
  if (opts.keep) sc.hmc.n_samples = sc.ess.n_samples = *opts.keep;

  if (opts.full_space) {
    HmcConfig hc = sc.hmc;
    hc.step_size = cfg.inference.full_step_size;
    hc.n_leapfrog = cfg.inference.full_n_leapfrog;
    hc.init_jitter = 0.01;
    Vector init = model.init_params(cfg.seed);
    if (ckpt) {
      const auto& sub = ckpt->subspace;
      const Vector point = phi_to_weights(sub, Vector::Zero(sub.k()));
      if (sub.scope == CurveScope::weights_and_theta) {
        init.head(point.size()) = point;
      } else {
        init.head(model.p()) = sub.theta_star;
        init.segment(model.p(), static_cast<Eigen::Index>(model.d())) = point;
      }
      if (model.has_log_sigma() && sub.log_sigma_star) init[init.size() - 1] = *sub.log_sigma_star;
    }
    return sample_full_space(model, cfg.inference.prior, data, hc, init, cfg.inference.full_space);
  }
  if (!ckpt) throw ConfigError("subspace sampling needs a checkpoint");
  const bool naive = ckpt->subspace.scope == CurveScope::weights_and_theta;
  if (naive != opts.naive)
    throw ConfigError(naive ? "checkpoint was trained in naive mode; pass --naive"
                            : "--naive needs a checkpoint trained with subspace.mode = naive");
  return sample_semi_subspace(model, ckpt->subspace, cfg.inference.prior, data, sc);
}

PosteriorSamples cmd_sample(const RunConfig& cfg, const SubspaceCheckpoint* ckpt,
                            const Dataset& data, const SampleOptions& opts) {
  ensure_dir(cfg.out);
  PosteriorSamples s = run_sampler(cfg, ckpt, data, opts);
  write_samples_csv(s, cfg.out / "samples.csv");
  int div = 0;
  for (const auto& c : s.stats) {
    std::cout << "chain " << c.chain << ": acceptance " << format_double(c.acceptance_rate)
              << ", divergences " << c.divergences << ", step size "
              << format_double(c.step_size) << "\n";
    div += c.divergences;
  }
  std::cout << s.size() << " draws, " << div << " divergences\n";
  return s;
}

DiagnosticsReport cmd_evaluate(const RunConfig& cfg, const PosteriorSamples& samples,
                               const SubspaceCheckpoint* ckpt, const Dataset& data) {
  const Dataset test = data.subset(Split::test);
  if (test.rows() == 0) throw std::invalid_argument("evaluate: the data has no test rows");
  if (samples.kind != SpaceKind::full && !ckpt)
    throw ConfigError("subspace samples need the checkpoint");
  const SsrModel model = ckpt ? ckpt->model() : make_model(cfg, data);
  const BezierSubspace* sub = ckpt ? &ckpt->subspace : nullptr;
  ensure_dir(cfg.out);
  DiagnosticsReport rep = evaluate_posterior(samples, model, sub, test);
  write_file_atomic(cfg.out / "report.json", rep.to_json().dump(2) + "\n");
  if (samples.size() >= 2) {
    const auto bands = predictive_bands(samples, model, sub, test, cfg.evaluate.hdi_mass, cfg.seed);
    write_file_atomic(cfg.out / "bands.csv", bands_to_csv(bands));
  }
  std::cout << "lppd " << format_double(rep.lppd.lppd) << " (se " << format_double(rep.lppd.se)
            << ") over " << rep.n_test << " test points\n";
  return rep;
}

bool StudyResult::any_failure() const {
  return std::any_of(status.begin(), status.end(), [](const RepStatus& s) { return !s.ok; });
}

std::string StudyResult::coverage_csv() const {
  std::ostringstream os;
  os << "method,k,param,alpha,empirical,wilson_low,wilson_high,n_trials\n";
  for (const auto& r : coverage)
    os << r.method << ',' << r.k << ',' << r.param << ',' << format_double(r.row.alpha) << ','
       << format_double(r.row.empirical) << ',' << format_double(r.row.wilson_low) << ','
       << format_double(r.row.wilson_high) << ',' << r.row.n_trials << '\n';
  return os.str();
}

std::string StudyResult::moment_diff_csv() const {
  std::ostringstream os;
  os << "rep,k,param,moment,subspace,full,diff\n";
  for (const auto& r : moment_diffs)
    os << r.rep << ',' << r.k << ',' << r.param << ',' << moment_name(r.moment) << ','
       << format_double(r.subspace) << ',' << format_double(r.full) << ','
       << format_double(r.diff()) << '\n';
  return os.str();
}

std::string StudyResult::timing_csv() const {
  std::ostringstream os;
  os << "rep,k,epoch,seconds\n";
  for (const auto& r : timing)
    os << r.rep << ',' << r.k << ',' << r.epoch << ',' << format_double(r.seconds) << '\n';
  return os.str();
}

std::string StudyResult::status_csv() const {
  std::ostringstream os;
  os << "rep,method,status,message\n";
  for (const auto& s : status)
    os << s.rep << ',' << s.method << ',' << (s.ok ? "ok" : "failed") << ','
       << csv_escape(s.message) << '\n';
  return os.str();
}

StudyResult run_coverage_study(const RunConfig& cfg, const StudyOptions& opts) {
  if (!cfg.data.simulation) throw ConfigError("coverage-study needs data.simulation");
  const auto& st = cfg.study;
  const int reps = opts.reps.value_or(st.reps);
  if (reps < 0) throw ConfigError("reps must be >= 0");

  std::vector<std::pair<std::string, int>> methods;
  for (int k : st.k_grid) methods.emplace_back("semi_k" + std::to_string(k), k);
  if (st.full_space) methods.emplace_back("full", 0);
  // runs[method][param]
  std::vector<std::vector<std::vector<CoverageRun>>> runs(
      methods.size(), std::vector<std::vector<CoverageRun>>(st.params.size()));

  StudyResult res;
  for (int r = 0; r < reps; ++r) {
    const auto ur = static_cast<std::uint64_t>(r);
    if (st.mode == StudyMode::self_calibrated) {
      std::mt19937_64 rng(derive_seed(cfg.seed, ur, 0));
      std::normal_distribution<double> nd(0.0, 1.0);
      const int n_draws = std::max(cfg.inference.sampler.hmc.n_samples, 2);
      std::vector<std::vector<Vector>> draws(methods.size());
      for (std::size_t m = 0; m < methods.size(); ++m)
        for (std::size_t j = 0; j < st.params.size(); ++j) {
          Vector v(n_draws);
          for (auto& x : v) x = nd(rng);
          runs[m][j].push_back({v, nd(rng)});
          draws[m].push_back(v);
        }
      for (std::size_t m = 0; st.full_space && m + 1 < methods.size(); ++m) {
        for (std::size_t j = 0; j < st.params.size(); ++j) {
          const Moments a = sample_moments(draws[m][j]);
          const Moments b = sample_moments(draws[methods.size() - 1][j]);
          for (int mo = 1; mo <= 4; ++mo)
            res.moment_diffs.push_back({r, methods[m].second, st.params[j], mo, a.get(mo), b.get(mo)});
        }
      }
      for (const auto& m : methods) res.status.push_back({r, m.first, true, ""});
      continue;
    }

    SimSpec spec = *cfg.data.simulation;
    spec.seed += ur;
    SimResult sim;
    try {
      sim = generate(spec);
    } catch (const std::exception& e) {
      for (const auto& m : methods) res.status.push_back({r, m.first, false, e.what()});
      continue;
    }
    const Dataset& data = sim.data;
    std::vector<int> cols;
    for (const auto& name : st.params) cols.push_back(theta_column(name, data.p()));

    std::vector<std::optional<PosteriorSamples>> got(methods.size());
    std::optional<Vector> full_init;
    for (std::size_t m = 0; m < methods.size(); ++m) {
      const int k = methods[m].second;
      RunConfig c = cfg;
      c.seed = derive_seed(cfg.seed, ur, static_cast<std::uint64_t>(k));
      try {
        const SsrModel model = make_model(c, data);
        if (k > 0) {
          TrainConfig tc = c.subspace.train;
          tc.seed = c.seed;
          tc.record_timing = tc.record_timing || opts.timing;
          const TrainResult tr = train_subspace(model, data, k, tc);
          if (!full_init) full_init = curve_params(model, tr, 0.5);
          if (opts.timing)
            for (const auto& e : tr.history) res.timing.push_back({r, k, e.epoch, e.seconds});
          SamplerConfig sc = c.inference.sampler;
          sc.hmc.seed = sc.ess.seed = c.seed;
          got[m] = sample_semi_subspace(model, build_projection(tr), c.inference.prior, data, sc);
        } else {
          HmcConfig hc = c.inference.sampler.hmc;
          hc.seed = c.seed;
          hc.step_size = c.inference.full_step_size;
          hc.n_leapfrog = c.inference.full_n_leapfrog;
          hc.init_jitter = 0.01;
          const Vector init = full_init ? *full_init : model.init_params(c.seed);
          got[m] = sample_full_space(model, c.inference.prior, data, hc, init,
                                     c.inference.full_space);
        }
        res.status.push_back({r, methods[m].first, true, ""});
      } catch (const std::exception& e) {
        res.status.push_back({r, methods[m].first, false, e.what()});
      }
    }
    for (std::size_t m = 0; m < methods.size(); ++m) {
      if (!got[m]) continue;
      for (std::size_t j = 0; j < st.params.size(); ++j)
        runs[m][j].push_back({got[m]->values(st.params[j]), sim.theta_star[cols[j]]});
    }
    if (st.full_space && got.back()) {
      for (std::size_t m = 0; m + 1 < methods.size(); ++m) {
        if (!got[m]) continue;
        for (int j = 0; j < data.p(); ++j) {
          const std::string name = "theta_" + std::to_string(j + 1);
          const Moments a = sample_moments(got[m]->values(name));
          const Moments b = sample_moments(got.back()->values(name));
          for (int mo = 1; mo <= 4; ++mo)
            res.moment_diffs.push_back({r, methods[m].second, name, mo, a.get(mo), b.get(mo)});
        }
      }
    }
  }

  for (std::size_t m = 0; m < methods.size(); ++m)
    for (std::size_t j = 0; j < st.params.size(); ++j) {
      if (runs[m][j].size() < 2) {
        if (reps > 0)
          warn("coverage: fewer than two successful runs for " + methods[m].first + ", skipped");
        continue;
      }
      const CoverageTable t = coverage_study(runs[m][j], st.alphas);
      for (const auto& row : t.rows)
        res.coverage.push_back({methods[m].first, methods[m].second, st.params[j], row});
    }
  return res;
}

int cmd_coverage_study(const RunConfig& cfg, const StudyOptions& opts) {
  ensure_dir(cfg.out);
  const StudyResult res = run_coverage_study(cfg, opts);
  write_file_atomic(cfg.out / "coverage.csv", res.coverage_csv());
  write_file_atomic(cfg.out / "moment_diff.csv", res.moment_diff_csv());
  write_file_atomic(cfg.out / "status.csv", res.status_csv());
  if (opts.timing) {
    write_file_atomic(cfg.out / "timing.csv", res.timing_csv());
    for (int k : cfg.study.k_grid) {
      double total = 0;
      int n = 0;
      for (const auto& t : res.timing)
        if (t.k == k) total += t.seconds, ++n;
      if (n > 0)
        std::cout << "k=" << k << ": " << format_double(total / n) << " s per epoch\n";
    }
  }
  std::size_t failed = 0;
  for (const auto& s : res.status) failed += s.ok ? 0 : 1;
  std::cout << res.status.size() - failed << " runs ok, " << failed << " failed\n";
  return res.any_failure() ? kExitPartial : kExitOk;
}

}  // namespace semisub
