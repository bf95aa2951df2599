#include "semisub/config.hpp"

#include <set>

#include "semisub/io.hpp"

namespace semisub {

namespace {

using nlohmann::json;

// Strict object reader: every key must be consumed before finish().
class Section {
 public:
  Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(where() + " must be an object");
  }

  bool has(const std::string& key) const { return j_.contains(key) && !j_.at(key).is_null(); }

  template <class T>
  void get(const std::string& key, T& out) {
    seen_.insert(key);
    if (!has(key)) return;
    try {
      out = j_.at(key).get<T>();
    } catch (const json::exception&) {
      throw ConfigError(where(key) + " has the wrong type");
    }
  }

  std::string str(const std::string& key, std::string fallback) {
    get(key, fallback);
    return fallback;
  }

  Section sub(const std::string& key) {
    seen_.insert(key);
    static const json empty = json::object();
    return Section(has(key) ? j_.at(key) : empty, where(key));
  }

  const json* raw(const std::string& key) {
    seen_.insert(key);
    return j_.contains(key) ? &j_.at(key) : nullptr;
  }

  std::string where(const std::string& key = "") const {
    if (key.empty()) return path_.empty() ? "config" : path_;
    return path_.empty() ? key : path_ + "." + key;
  }

  void finish() const {
    for (const auto& [key, value] : j_.items())
      if (!seen_.count(key)) throw ConfigError("unknown config key '" + where(key) + "'");
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

template <class F>
auto wrap(const std::string& what, F&& f) {
  try {
    return f();
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception& e) {
    throw ConfigError(what + ": " + e.what());
  }
}

ModelSection parse_model(Section s) {
  ModelSection m;
  s.get("hidden", m.hidden);
  m.activation = wrap("model.activation",
                      [&] { return activation_from_string(s.str("activation", "relu")); });
  m.head.family =
      wrap("model.family", [&] { return family_from_string(s.str("family", "normal")); });
  const std::string disp = s.str("dispersion", "learnable");
  if (disp != "learnable" && disp != "fixed")
    throw ConfigError("model.dispersion must be 'learnable' or 'fixed'");
  m.head.learnable_dispersion = disp == "learnable";
  s.get("sigma", m.head.fixed_sigma);
  s.finish();
  return m;
}

SubspaceSection parse_subspace(Section s, std::uint64_t seed) {
  SubspaceSection out;
  auto& t = out.train;
  s.get("k", out.k);
  const std::string mode = s.str("mode", "semi");
  if (mode == "semi")
    t.scope = CurveScope::weights;
  else if (mode == "naive")
    t.scope = CurveScope::weights_and_theta;
  else
    throw ConfigError("subspace.mode must be 'semi' or 'naive'");
  s.get("learning_rate", t.learning_rate);
  s.get("weight_decay", t.weight_decay);
  s.get("beta1", t.beta1);
  s.get("beta2", t.beta2);
  s.get("eps", t.eps);
  s.get("max_epochs", t.max_epochs);
  s.get("batch_size", t.batch_size);
  s.get("val_fraction", t.val_fraction);
  s.get("early_selection", t.early_selection);
  s.get("val_t", t.val_t);
  t.seed = seed;
  s.finish();
  return out;
}

InferenceSection parse_inference(Section s, std::uint64_t seed) {
  InferenceSection inf;
  auto& sc = inf.sampler;
  const std::string sampler = s.str("sampler", "hmc");
  if (sampler == "hmc")
    sc.sampler = SamplerKind::hmc;
  else if (sampler == "ess")
    sc.sampler = SamplerKind::ess;
  else
    throw ConfigError("inference.sampler must be 'hmc' or 'ess'");
  s.get("cold_start", sc.cold_start);
  s.get("init_jitter", sc.init_jitter);

  Section h = s.sub("hmc");
  h.get("step_size", sc.hmc.step_size);
  h.get("n_leapfrog", sc.hmc.n_leapfrog);
  h.get("n_samples", sc.hmc.n_samples);
  h.get("n_warmup", sc.hmc.n_warmup);
  h.get("n_chains", sc.hmc.n_chains);
  if (const json* ta = h.raw("target_accept")) {
    if (ta->is_null())
      sc.hmc.target_accept.reset();
    else if (ta->is_number())
      sc.hmc.target_accept = ta->get<double>();
    else
      throw ConfigError("inference.hmc.target_accept must be a number or null");
  }
  h.finish();
  sc.hmc.seed = seed;

  Section e = s.sub("ess");
  e.get("n_samples", sc.ess.n_samples);
  e.get("n_warmup", sc.ess.n_warmup);
  e.get("n_chains", sc.ess.n_chains);
  e.get("minibatch", sc.ess.minibatch);
  e.get("max_shrinks", sc.ess.max_shrinks);
  e.finish();
  sc.ess.seed = seed;

  Section p = s.sub("prior");
  p.get("sigma_phi", inf.prior.sigma_phi);
  p.get("sigma_theta", inf.prior.sigma_theta);
  p.get("sigma_w", inf.prior.sigma_w);
  p.get("log_sigma_mean", inf.prior.log_sigma_mean);
  p.get("log_sigma_sd", inf.prior.log_sigma_sd);
  p.finish();

  Section t = s.sub("tempering");
  auto& tc = sc.tempering;
  t.get("enabled", tc.enabled);
  const std::string form = t.str("form", "plain");
  if (form == "plain")
    tc.form = TemperingForm::plain;
  else if (form == "split")
    tc.form = TemperingForm::split;
  else
    throw ConfigError("inference.tempering.form must be 'plain' or 'split'");
  t.get("temperature", tc.temperature);
  t.get("grid_points", tc.grid_points);
  t.get("grid_halfwidth_sd", tc.grid_halfwidth_sd);
  t.finish();

  Section f = s.sub("full_space");
  f.get("max_dim", inf.full_space.max_dim);
  f.get("allow_large", inf.full_space.allow_large);
  f.get("step_size", inf.full_step_size);
  f.get("n_leapfrog", inf.full_n_leapfrog);
  f.finish();
  s.finish();
  return inf;
}

SimSpec parse_simulation(Section s, std::uint64_t seed) {
  const SimFamily family =
      wrap("data.simulation.family", [&] { return sim_family_from_string(s.str("family", "toy_1d")); });
  SimSpec spec = family == SimFamily::toy_1d ? SimSpec::toy(seed) : SimSpec::simulation(family, seed);
  s.get("n_train", spec.n_train);
  s.get("n_val", spec.n_val);
  s.get("n_test", spec.n_test);
  s.get("seed", spec.seed);
  if (const json* ts = s.raw("theta_star"); ts && !ts->is_null()) {
    std::vector<double> v;
    try {
      v = ts->get<std::vector<double>>();
    } catch (const json::exception&) {
      throw ConfigError("data.simulation.theta_star must be an array of numbers");
    }
    spec.theta_star = Eigen::Map<const Vector>(v.data(), static_cast<Eigen::Index>(v.size()));
  }
  if (const json* gs = s.raw("generator_seed"); gs && !gs->is_null()) {
    if (!gs->is_number_unsigned()) throw ConfigError("data.simulation.generator_seed must be >= 0");
    spec.generator_seed = gs->get<std::uint64_t>();
  }
  s.get("noise_sd", spec.noise_sd);
  const std::string design = s.str("toy_test_design", "clusters");
  if (design == "uniform")
    spec.toy_test_design = ToyTestDesign::uniform;
  else if (design == "clusters")
    spec.toy_test_design = ToyTestDesign::clusters;
  else
    throw ConfigError("data.simulation.toy_test_design must be 'uniform' or 'clusters'");
  s.get("q", spec.q);
  s.get("p", spec.p);
  s.finish();
  return spec;
}

CsvSource parse_csv_source(Section s, std::uint64_t seed) {
  CsvSource src;
  std::string path;
  s.get("path", path);
  if (path.empty()) throw ConfigError("data.csv.path is required");
  src.path = path;
  auto& sc = src.schema;
  s.get("y", sc.y);
  s.get("x", sc.x);
  s.get("u", sc.u);
  s.get("split_column", sc.split_column);
  s.get("fractions", sc.fractions);
  sc.seed = seed;
  s.get("seed", sc.seed);
  s.get("standardize_u", sc.standardize_u);
  s.get("standardize_y", sc.standardize_y);
  s.finish();
  return src;
}

StudySection parse_study(Section s) {
  StudySection st;
  s.get("reps", st.reps);
  s.get("k_grid", st.k_grid);
  s.get("alphas", st.alphas);
  s.get("params", st.params);
  s.get("full_space", st.full_space);
  const std::string mode = s.str("mode", "pipeline");
  if (mode == "pipeline")
    st.mode = StudyMode::pipeline;
  else if (mode == "self_calibrated")
    st.mode = StudyMode::self_calibrated;
  else
    throw ConfigError("study.mode must be 'pipeline' or 'self_calibrated'");
  s.finish();
  return st;
}

}  // namespace

MlpArchitecture ModelSection::arch(int q) const {
  MlpArchitecture a;
  a.input_dim = q;
  for (int w : hidden) a.hidden.push_back({w, activation});
  return a;
}

std::vector<double> StudySection::default_alphas() {
  std::vector<double> g;
  for (int i = 1; i <= 19; ++i) g.push_back(i * 0.05);
  return g;
}

void RunConfig::validate() const {
  if (subspace.k < 1) throw ConfigError("subspace.k must be >= 1");
  if (data.simulation.has_value() == data.csv.has_value())
    throw ConfigError("data must contain exactly one of 'simulation' or 'csv'");
  if (data.csv && !std::filesystem::exists(data.csv->path))
    throw ConfigError("data file not found: " + data.csv->path.string());
  for (int w : model.hidden)
    if (w < 1) throw ConfigError("model.hidden widths must be >= 1");
  if (study.reps < 0) throw ConfigError("study.reps must be >= 0");
  if (study.k_grid.empty()) throw ConfigError("study.k_grid must not be empty");
  for (int k : study.k_grid)
    if (k < 1) throw ConfigError("study.k_grid entries must be >= 1");
  for (double a : study.alphas)
    if (!(a > 0 && a < 1)) throw ConfigError("study.alphas must lie in (0, 1)");
  if (study.params.empty()) throw ConfigError("study.params must not be empty");
  if (!(evaluate.hdi_mass > 0 && evaluate.hdi_mass < 1))
    throw ConfigError("evaluate.hdi_mass must lie in (0, 1)");
  if (inference.full_step_size <= 0 || inference.full_n_leapfrog < 1)
    throw ConfigError("inference.full_space step settings must be positive");
  wrap("model", [&] { model.head.validate(); return 0; });
  wrap("subspace", [&] { subspace.train.validate(); return 0; });
  wrap("inference.hmc", [&] { inference.sampler.hmc.validate(); return 0; });
  wrap("inference.ess", [&] { inference.sampler.ess.validate(); return 0; });
  wrap("inference.prior", [&] { inference.prior.validate(); return 0; });
  wrap("inference.tempering", [&] { inference.sampler.tempering.validate(); return 0; });
  if (data.simulation) wrap("data.simulation", [&] { data.simulation->validate(); return 0; });
}

void apply_override(nlohmann::json& doc, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0)
    throw ConfigError("override must look like section.key=value: " + assignment);
  const std::string path = assignment.substr(0, eq);
  const std::string text = assignment.substr(eq + 1);
  json value = json::parse(text, nullptr, false);
  if (value.is_discarded()) value = text;

  json* node = &doc;
  std::size_t start = 0;
  while (true) {
    const auto dot = path.find('.', start);
    const std::string key = path.substr(start, dot == std::string::npos ? dot : dot - start);
    if (key.empty()) throw ConfigError("empty key in override: " + assignment);
    if (!node->is_object()) throw ConfigError("override path is not an object: " + path);
    if (dot == std::string::npos) {
      (*node)[key] = value;
      return;
    }
    node = &(*node)[key];
    if (node->is_null()) *node = json::object();
    start = dot + 1;
  }
}

RunConfig parse_config(const nlohmann::json& doc) {
  Section root(doc, "");
  RunConfig cfg;
  root.get("seed", cfg.seed);
  std::string out = cfg.out.string();
  root.get("out", out);
  cfg.out = out;
  cfg.model = parse_model(root.sub("model"));
  cfg.subspace = parse_subspace(root.sub("subspace"), cfg.seed);
  cfg.inference = parse_inference(root.sub("inference"), cfg.seed);
  Section data = root.sub("data");
  if (data.has("simulation"))
    cfg.data.simulation = parse_simulation(data.sub("simulation"), cfg.seed);
  else
    data.sub("simulation");
  if (data.has("csv"))
    cfg.data.csv = parse_csv_source(data.sub("csv"), cfg.seed);
  else
    data.sub("csv");
  data.finish();
  cfg.study = parse_study(root.sub("study"));
  Section ev = root.sub("evaluate");
  ev.get("hdi_mass", cfg.evaluate.hdi_mass);
  ev.finish();
  root.finish();
  cfg.validate();
  return cfg;
}

RunConfig load_config(const std::filesystem::path& path,
                      const std::vector<std::string>& overrides) {
  json doc = json::object();
  if (!path.empty()) {
    std::string text;
    try {
      text = read_text_file(path);
    } catch (const std::exception& e) {
      throw ConfigError(e.what());
    }
    doc = json::parse(text, nullptr, false);
    if (doc.is_discarded()) throw ConfigError("config is not valid JSON: " + path.string());
  }
  for (const auto& o : overrides) apply_override(doc, o);
  if (!path.empty() && doc.contains("data") && doc["data"].is_object() &&
      doc["data"].contains("csv") && doc["data"]["csv"].is_object() &&
      doc["data"]["csv"].contains("path") && doc["data"]["csv"]["path"].is_string()) {
    std::filesystem::path p = doc["data"]["csv"]["path"].get<std::string>();
    if (p.is_relative()) doc["data"]["csv"]["path"] = (path.parent_path() / p).string();
  }
  return parse_config(doc);
}

nlohmann::json config_to_json(const RunConfig& cfg) {
  json j;
  j["seed"] = cfg.seed;
  j["out"] = cfg.out.string();
  j["model"] = {{"hidden", cfg.model.hidden},
                {"activation", to_string(cfg.model.activation)},
                {"family", to_string(cfg.model.head.family)},
                {"dispersion", cfg.model.head.learnable_dispersion ? "learnable" : "fixed"},
                {"sigma", cfg.model.head.fixed_sigma}};
  const auto& t = cfg.subspace.train;
  j["subspace"] = {{"k", cfg.subspace.k},
                   {"mode", t.scope == CurveScope::weights ? "semi" : "naive"},
                   {"learning_rate", t.learning_rate},
                   {"weight_decay", t.weight_decay},
                   {"beta1", t.beta1},
                   {"beta2", t.beta2},
                   {"eps", t.eps},
                   {"max_epochs", t.max_epochs},
                   {"batch_size", t.batch_size},
                   {"val_fraction", t.val_fraction},
                   {"early_selection", t.early_selection},
                   {"val_t", t.val_t}};
  const auto& sc = cfg.inference.sampler;
  const auto& pr = cfg.inference.prior;
  j["inference"] = {
      {"sampler", sc.sampler == SamplerKind::hmc ? "hmc" : "ess"},
      {"cold_start", sc.cold_start},
      {"init_jitter", sc.init_jitter},
      {"hmc",
       {{"step_size", sc.hmc.step_size},
        {"n_leapfrog", sc.hmc.n_leapfrog},
        {"n_samples", sc.hmc.n_samples},
        {"n_warmup", sc.hmc.n_warmup},
        {"n_chains", sc.hmc.n_chains},
        {"target_accept", sc.hmc.target_accept ? json(*sc.hmc.target_accept) : json(nullptr)}}},
      {"ess",
       {{"n_samples", sc.ess.n_samples},
        {"n_warmup", sc.ess.n_warmup},
        {"n_chains", sc.ess.n_chains},
        {"minibatch", sc.ess.minibatch},
        {"max_shrinks", sc.ess.max_shrinks}}},
      {"prior",
       {{"sigma_phi", pr.sigma_phi},
        {"sigma_theta", pr.sigma_theta},
        {"sigma_w", pr.sigma_w},
        {"log_sigma_mean", pr.log_sigma_mean},
        {"log_sigma_sd", pr.log_sigma_sd}}},
      {"tempering",
       {{"enabled", sc.tempering.enabled},
        {"form", sc.tempering.form == TemperingForm::plain ? "plain" : "split"},
        {"temperature", sc.tempering.temperature},
        {"grid_points", sc.tempering.grid_points},
        {"grid_halfwidth_sd", sc.tempering.grid_halfwidth_sd}}},
      {"full_space",
       {{"max_dim", cfg.inference.full_space.max_dim},
        {"allow_large", cfg.inference.full_space.allow_large},
        {"step_size", cfg.inference.full_step_size},
        {"n_leapfrog", cfg.inference.full_n_leapfrog}}}};
  j["data"] = json::object();
  if (const auto& s = cfg.data.simulation) {
    json sim = {{"family", to_string(s->family)},
                {"n_train", s->n_train},
                {"n_val", s->n_val},
                {"n_test", s->n_test},
                {"seed", s->seed},
                {"noise_sd", s->noise_sd},
                {"toy_test_design",
                 s->toy_test_design == ToyTestDesign::uniform ? "uniform" : "clusters"},
                {"q", s->q},
                {"p", s->p}};
    if (s->theta_star)
      sim["theta_star"] = std::vector<double>(s->theta_star->data(),
                                              s->theta_star->data() + s->theta_star->size());
    if (s->generator_seed) sim["generator_seed"] = *s->generator_seed;
    j["data"]["simulation"] = sim;
  }
  if (const auto& c = cfg.data.csv) {
    const auto& sc2 = c->schema;
    j["data"]["csv"] = {{"path", c->path.string()},
                        {"y", sc2.y},
                        {"x", sc2.x},
                        {"u", sc2.u},
                        {"split_column", sc2.split_column},
                        {"fractions", sc2.fractions},
                        {"seed", sc2.seed},
                        {"standardize_u", sc2.standardize_u},
                        {"standardize_y", sc2.standardize_y}};
  }
  j["study"] = {{"reps", cfg.study.reps},
                {"k_grid", cfg.study.k_grid},
                {"alphas", cfg.study.alphas},
                {"params", cfg.study.params},
                {"full_space", cfg.study.full_space},
                {"mode", cfg.study.mode == StudyMode::pipeline ? "pipeline" : "self_calibrated"}};
  j["evaluate"] = {{"hdi_mass", cfg.evaluate.hdi_mass}};
  return j;
}

}  // namespace semisub
