#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "semisub/commands.hpp"

namespace py = pybind11;
using namespace semisub;

namespace {

RunConfig config_from(const std::string& text) { return parse_config(nlohmann::json::parse(text)); }

Dataset split_of(const Dataset& d, const std::string& name) {
  if (name == "train") return d.subset(Split::train);
  if (name == "val") return d.subset(Split::val);
  if (name == "test") return d.subset(Split::test);
  if (name == "all") return d;
  throw std::invalid_argument("unknown split '" + name + "'");
}

}  // namespace

PYBIND11_MODULE(_semisub, m) {
  m.doc() = "Semi-structured subspace inference core";

  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<NumericError>(m, "NumericError", PyExc_ArithmeticError);

  py::class_<RunConfig>(m, "RunConfig")
      .def_readonly("seed", &RunConfig::seed)
      .def("to_json", [](const RunConfig& c) { return config_to_json(c).dump(); });

  py::class_<Dataset>(m, "Dataset")
      .def_readonly("y", &Dataset::y)
      .def_readonly("X", &Dataset::X)
      .def_readonly("U", &Dataset::U)
      .def_property_readonly("split",
                             [](const Dataset& d) {
                               std::vector<std::string> s;
                               for (Split v : d.split) s.push_back(to_string(v));
                               return s;
                             })
      .def("subset", &split_of, py::arg("split"))
      .def("__len__", &Dataset::rows);

  py::class_<SubspaceCheckpoint>(m, "Checkpoint")
      .def_property_readonly("k", [](const SubspaceCheckpoint& c) { return c.subspace.k(); })
      .def_property_readonly("mean", [](const SubspaceCheckpoint& c) { return c.subspace.mean; })
      .def_property_readonly("projection",
                             [](const SubspaceCheckpoint& c) { return c.subspace.projection; })
      .def_readonly("best_epoch", &SubspaceCheckpoint::best_epoch)
      .def_readonly("train_nll", &SubspaceCheckpoint::train_nll)
      .def("to_json", [](const SubspaceCheckpoint& c) { return checkpoint_to_json(c).dump(); })
      .def_static("from_json", [](const std::string& s) {
        return checkpoint_from_json(nlohmann::json::parse(s));
      });

  py::class_<PosteriorSamples>(m, "Samples")
      .def_readonly("columns", &PosteriorSamples::columns)
      .def_readonly("draws", &PosteriorSamples::draws)
      .def_readonly("chain", &PosteriorSamples::chain)
      .def_property_readonly("kind", [](const PosteriorSamples& s) { return to_string(s.kind); })
      .def("values", &PosteriorSamples::values, py::arg("name"))
      .def("to_csv", &samples_to_csv)
      .def_static("from_csv", &parse_samples_csv)
      .def("__len__", &PosteriorSamples::size);

  m.def("parse_config", &config_from, py::arg("json_text"));
  m.def("load_dataset", [](const RunConfig& c) { return load_dataset(c); }, py::arg("config"));
  m.def("train_subspace", &train_checkpoint, py::arg("config"), py::arg("data"));
  m.def(
      "sample",
      [](const RunConfig& c, const SubspaceCheckpoint* ck, const Dataset& d, bool full_space,
         bool naive, std::optional<int> chains, std::optional<int> keep) {
        SampleOptions o{full_space, naive, chains, keep};
        py::gil_scoped_release release;
        return run_sampler(c, ck, d, o);
      },
      py::arg("config"), py::arg("checkpoint"), py::arg("data"), py::arg("full_space") = false,
      py::arg("naive") = false, py::arg("chains") = std::nullopt, py::arg("keep") = std::nullopt);
  m.def(
      "evaluate",
      [](const RunConfig& c, const PosteriorSamples& s, const SubspaceCheckpoint* ck,
         const Dataset& d) {
        if (s.kind != SpaceKind::full && !ck)
          throw std::invalid_argument("subspace samples need their checkpoint");
        const SsrModel model = ck ? ck->model() : make_model(c, d);
        const BezierSubspace* sub = s.kind == SpaceKind::full ? nullptr : &ck->subspace;
        return evaluate_posterior(s, model, sub, d.subset(Split::test)).to_json().dump();
      },
      py::arg("config"), py::arg("samples"), py::arg("checkpoint"), py::arg("data"));
  m.def(
      "coverage_study",
      [](const RunConfig& c) {
        StudyResult r;
        {
          py::gil_scoped_release release;
          r = run_coverage_study(c, StudyOptions{true, std::nullopt});
        }
        py::dict out;
        out["coverage"] = r.coverage_csv();
        out["moment_diff"] = r.moment_diff_csv();
        out["timing"] = r.timing_csv();
        out["status"] = r.status_csv();
        return out;
      },
      py::arg("config"));

  m.def("lppd", [](const Matrix& loglik) {
    const LppdResult r = lppd_from_loglik(loglik);
    return py::make_tuple(r.lppd, r.se, r.pointwise);
  });
  m.def(
      "wilson_interval", [](std::size_t k, std::size_t n) { return wilson_interval(k, n); },
      py::arg("successes"), py::arg("n"));
  m.def("credible_interval",
        py::overload_cast<const Vector&, double>(&credible_interval), py::arg("draws"),
        py::arg("alpha"));
  m.def("hdi", &hdi, py::arg("draws"), py::arg("mass"));
  m.def("auc", &auc, py::arg("labels"), py::arg("scores"));
}
