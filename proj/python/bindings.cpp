// Python bindings for the iirc engine.

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <json.hpp>

#include "iirc/error.hpp"
#include "iirc/harness.hpp"
#include "iirc/learners.hpp"
#include "iirc/metrics.hpp"
#include "iirc/stream.hpp"

namespace py = pybind11;
using namespace iirc;

namespace {

std::vector<std::string> names_of(const Hierarchy& h, const LabelSet& set) {
  std::vector<std::string> out;
  for (auto c : set) out.push_back(h.name(c));
  return out;
}

LabelSet set_of(const Hierarchy& h, const std::vector<std::string>& names) {
  LabelSet out;
  for (const auto& n : names) out.push_back(h.index_of(n));
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

// Names interned on the fly so scoring works without a hierarchy.
std::vector<PredictionRecord> records_of(const std::vector<std::vector<std::string>>& truth,
                                         const std::vector<std::vector<std::string>>& predicted) {
  if (truth.size() != predicted.size()) throw Error(ErrorKind::DimensionMismatch, "truth and predicted differ in length");
  std::unordered_map<std::string, ClassIndex> ids;
  auto intern = [&](const std::vector<std::string>& names) {
    LabelSet s;
    for (const auto& n : names) s.push_back(ids.try_emplace(n, ids.size()).first->second);
    std::sort(s.begin(), s.end());
    s.erase(std::unique(s.begin(), s.end()), s.end());
    return s;
  };
  std::vector<PredictionRecord> out;
  out.reserve(truth.size());
  for (std::size_t i = 0; i < truth.size(); ++i) out.push_back({i, intern(truth[i]), intern(predicted[i])});
  return out;
}

py::dict scores_dict(const Scores& s) {
  py::dict d;
  d["MR"] = s.mr;
  d["JS"] = s.js;
  d["pwJS"] = s.pw_js;
  d["samples"] = s.count;
  return d;
}

ExperimentConfig config_from(const std::string& text) {
  return ExperimentConfig::from_json(nlohmann::json::parse(text));
}

FirstTaskPolicy policy_of(const std::string& name) {
  if (name == "prefer_superclasses") return FirstTaskPolicy::PreferSuperclasses;
  if (name == "superclasses_only") return FirstTaskPolicy::SuperclassesOnly;
  throw Error(ErrorKind::InvalidConfig, "unknown first task policy '" + name + "'");
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Incremental implicitly-refined classification engine";

  static py::exception<Error> error(m, "IircError", PyExc_ValueError);
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const Error& e) {
      py::object kind = py::str(std::string(to_string(e.kind())));
      PyErr_SetObject(error.ptr(), py::make_tuple(py::str(e.what()), kind).ptr());
    } catch (const nlohmann::json::exception& e) {
      PyErr_SetString(error.ptr(), e.what());
    }
  });

  py::class_<Hierarchy>(m, "Hierarchy")
      .def_static("cifar", &Hierarchy::cifar, py::return_value_policy::copy)
      .def_static("parse_tsv", &Hierarchy::parse_tsv, py::arg("text"))
      .def_static("load", [](const std::string& path) { return Hierarchy::load(path); }, py::arg("path"))
      .def("to_tsv", &Hierarchy::to_tsv)
      .def("__len__", &Hierarchy::size)
      .def_property_readonly("superclass_count", &Hierarchy::superclass_count)
      .def_property_readonly("leaf_count", &Hierarchy::leaf_count)
      .def_property_readonly("names", &Hierarchy::names)
      .def("index_of", [](const Hierarchy& h, const std::string& n) { return h.index_of(n); })
      .def("parent",
           [](const Hierarchy& h, const std::string& n) -> std::optional<std::string> {
             const auto p = h.parent(h.index_of(n));
             if (!p) return std::nullopt;
             return h.name(*p);
           })
      .def("children",
           [](const Hierarchy& h, const std::string& n) {
             const auto c = h.children(h.index_of(n));
             return names_of(h, LabelSet(c.begin(), c.end()));
           })
      .def("is_superclass", [](const Hierarchy& h, const std::string& n) { return h.is_superclass(h.index_of(n)); })
      .def("labels_of", [](const Hierarchy& h, const std::string& n) { return names_of(h, h.labels_of(n)); })
      .def("__eq__", [](const Hierarchy& a, const Hierarchy& b) { return a == b; });

  m.def(
      "generate_synthetic",
      [](const Hierarchy& h, std::size_t dim, std::size_t samples_per_subclass, std::uint64_t seed, std::uint64_t pool,
         double sigma_super, double sigma_sub, double sigma_noise) {
        SynthSpec spec;
        spec.dim = dim;
        spec.samples_per_subclass = samples_per_subclass;
        spec.seed = seed;
        spec.pool = pool;
        spec.sigma_super = sigma_super;
        spec.sigma_sub = sigma_sub;
        spec.sigma_noise = sigma_noise;
        const auto samples = generate_synthetic(h, spec);
        py::array_t<double> x({samples.size(), dim});
        auto xv = x.mutable_unchecked<2>();
        std::vector<std::string> labels;
        labels.reserve(samples.size());
        for (std::size_t i = 0; i < samples.size(); ++i) {
          for (std::size_t c = 0; c < dim; ++c) xv(i, c) = samples[i].features[c];
          labels.push_back(h.name(samples[i].subclass));
        }
        return py::make_tuple(x, labels);
      },
      py::arg("hierarchy"), py::arg("dim") = 16, py::arg("samples_per_subclass") = 500, py::arg("seed") = 0,
      py::arg("pool") = 0, py::arg("sigma_super") = 10.0, py::arg("sigma_sub") = 3.0, py::arg("sigma_noise") = 1.0,
      "Returns (features[n, dim], subclass names).");

  m.def(
      "task_configuration",
      [](const Hierarchy& h, std::size_t first_task_size, std::size_t task_size, std::uint64_t seed,
         const std::string& policy) {
        const auto tasks = generate_task_configuration(h, first_task_size, task_size, seed, policy_of(policy));
        validate_task_configuration(h, tasks);
        std::vector<std::vector<std::string>> out;
        for (const auto& t : tasks.tasks) out.push_back(names_of(h, t));
        return out;
      },
      py::arg("hierarchy"), py::arg("first_task_size") = 10, py::arg("task_size") = 5, py::arg("seed") = 0,
      py::arg("policy") = "prefer_superclasses");

  m.def(
      "validate_task_configuration",
      [](const Hierarchy& h, const std::vector<std::vector<std::string>>& tasks) {
        TaskConfiguration config;
        for (const auto& t : tasks) {
          config.tasks.emplace_back();
          for (const auto& n : t) config.tasks.back().push_back(h.index_of(n));
        }
        validate_task_configuration(h, config);
      },
      py::arg("hierarchy"), py::arg("tasks"));

  m.def(
      "sample_scores",
      [](const Hierarchy& h, const std::vector<std::string>& truth, const std::vector<std::string>& predicted) {
        const auto t = set_of(h, truth);
        const auto p = set_of(h, predicted);
        return py::make_tuple(t == p ? 1.0 : 0.0, sample_jaccard(t, p), sample_pw_jaccard(t, p));
      },
      py::arg("hierarchy"), py::arg("truth"), py::arg("predicted"), "Returns (exact match, Jaccard, pw-Jaccard).");

  m.def(
      "score",
      [](const std::vector<std::vector<std::string>>& truth, const std::vector<std::vector<std::string>>& predicted) {
        return scores_dict(score(records_of(truth, predicted)));
      },
      py::arg("truth"), py::arg("predicted"), "Mean MR, JS and pwJS over label-name sets.");

  m.def(
      "agem_project",
      [](const std::vector<double>& g, const std::vector<double>& g_ref) {
        if (g.size() != g_ref.size()) throw Error(ErrorKind::DimensionMismatch, "gradient lengths differ");
        return agem_project(g, g_ref);
      },
      py::arg("g"), py::arg("g_ref"));

  m.def(
      "split_report",
      [](const std::string& config_json, std::optional<std::uint64_t> data_seed) {
        const auto config = config_from(config_json);
        config.validate();
        const auto data = build_datasets(config, data_seed.value_or(config.data.seed.value_or(config.seeds.front())));
        const auto report = split_report(data, config.assignment);
        py::list rows;
        for (const auto& r : report.rows) {
          py::dict d;
          d["split"] = r.split;
          d["with_duplicates"] = r.with_duplicates;
          d["without_duplicates"] = r.without_duplicates;
          rows.append(d);
        }
        return py::make_tuple(rows, report.identity_holds);
      },
      py::arg("config_json") = "{}", py::arg("data_seed") = py::none(),
      "Returns (rows, identity_holds) for the four splits.");

  m.def(
      "run_experiment",
      [](const std::string& config_json, bool write_outputs) {
        const auto config = config_from(config_json);
        config.validate();
        RunSummary summary;
        {
          py::gil_scoped_release release;
          summary = run_experiment(config, write_outputs);
        }
        py::list runs;
        for (const auto& r : summary.runs) {
          py::dict d;
          d["learner"] = r.learner.name();
          d["seed"] = r.seed;
          d["failure"] = r.failure ? py::object(py::str(*r.failure)) : py::object(py::none());
          py::list curve;
          py::list matrix;
          for (const auto& rec : r.records) {
            curve.append(scores_dict(rec.test));
            matrix.append(rec.r_row);
          }
          d["curve"] = curve;
          d["R"] = matrix;
          runs.append(d);
        }
        return runs;
      },
      py::arg("config_json") = "{}", py::arg("write_outputs") = false,
      "Runs every learner and seed of a JSON config; one dict per run.");
}
