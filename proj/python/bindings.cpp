#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <optional>
#include <sstream>

#include "rtdtr/harness.hpp"
#include "rtdtr/io.hpp"
#include "rtdtr/recsvc.hpp"
#include "rtdtr/rng.hpp"

namespace py = pybind11;
using namespace rtdtr;

namespace {

StudyConfig config_of(const std::string& text, const std::string& base_dir) {
  return study_config_from_json(text.empty() ? "{}" : text, base_dir);
}

std::string cohort_text(const Cohort& c) {
  std::ostringstream os;
  write_cohort(c, os);
  return os.str();
}

Cohort cohort_from_text(const std::string& text) {
  std::istringstream is(text);
  return read_cohort(is);
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Random real-time dynamic treatment regimes";

  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<DomainError>(m, "DomainError", PyExc_ValueError);
  py::register_exception<DataError>(m, "DataError", PyExc_RuntimeError);
  py::register_exception<DiagnosticFailure>(m, "DiagnosticFailure", PyExc_RuntimeError);

  py::class_<Cohort>(m, "Cohort")
      .def_property_readonly("n", &Cohort::n)
      .def_property_readonly("case", [](const Cohort& c) { return std::string(case_name(c.case_id)); })
      .def_readonly("seed", &Cohort::seed)
      .def_property_readonly("outcomes",
                             [](const Cohort& c) {
                               std::vector<double> y;
                               for (const auto& u : c.units) y.push_back(u.y);
                               return y;
                             })
      .def_property_readonly("switch_counts",
                             [](const Cohort& c) {
                               std::vector<std::size_t> j;
                               for (const auto& u : c.units) j.push_back(u.switch_count());
                               return j;
                             })
      .def("to_jsonl", &cohort_text)
      .def_static("from_jsonl", &cohort_from_text)
      .def("save", [](const Cohort& c, const std::string& path) { write_cohort(c, path); })
      .def_static("load", [](const std::string& path) { return read_cohort(path); });

  py::class_<PosteriorDraws>(m, "Posterior")
      .def_readonly("draws", &PosteriorDraws::draws)
      .def_readonly("acceptance_rate", &PosteriorDraws::acceptance_rate)
      .def_property_readonly("family", [](const PosteriorDraws& p) { return std::string(family_name(p.family)); })
      .def("mean", &PosteriorDraws::mean)
      .def("to_json", &posterior_to_json)
      .def_static("from_json", &posterior_from_json);

  m.def(
      "simulate",
      [](const std::string& config, std::size_t n, const std::string& base_dir) {
        const auto sc = config_of(config, base_dir);
        const auto world = make_world(sc.run);
        return redact_latent(generate_observed_cohort(*world, n, derive_seed(sc.seed, {stream::kTraining})));
      },
      py::arg("config"), py::arg("n"), py::arg("base_dir") = ".");

  m.def(
      "fit_theta",
      [](const Cohort& cohort, const std::string& config, const std::string& base_dir) {
        auto sc = config_of(config, base_dir);
        if (cohort.case_id != sc.run.case_id) throw ConfigError("cohort case differs from the config case");
        McmcConfig mc = sc.run.mcmc;
        mc.seed = derive_seed(sc.seed, {stream::kMcmc});
        py::gil_scoped_release release;
        return sample_posterior(cohort, make_world(sc.run)->observational().family, mc);
      },
      py::arg("cohort"), py::arg("config"), py::arg("base_dir") = ".");

  m.def(
      "optimize",
      [](const Cohort& cohort, const PosteriorDraws& draws, const std::string& config, const std::string& base_dir) {
        const auto sc = config_of(config, base_dir);
        const auto family = make_world(sc.run)->policy_family();
        PolicyEstimate est;
        {
          py::gil_scoped_release release;
          const PolicyObjective obj(cohort, draws, family, sc.run.self_normalized);
          const auto theta_hat = draws.mean();
          est = optimize_eta(obj, optimizer_box(sc.run, family_dimension(family), &theta_hat,
                                                derive_seed(sc.seed, {stream::kOptimizer})));
        }
        return estimate_to_json(est, family);
      },
      py::arg("cohort"), py::arg("posterior"), py::arg("config"), py::arg("base_dir") = ".");

  m.def(
      "evaluate",
      [](const std::string& config, const std::vector<double>& eta, std::size_t n_eval, const std::string& base_dir) {
        const auto sc = config_of(config, base_dir);
        const auto world = make_world(sc.run);
        if (eta.size() != family_dimension(world->policy_family()))
          throw ConfigError("eta has wrong length for the case's policy family");
        py::gil_scoped_release release;
        return evaluate_policy_loss(*world, eta, world->policy_family(), n_eval ? n_eval : sc.run.n_eval,
                                    derive_seed(sc.seed, {stream::kEvaluation}));
      },
      py::arg("config"), py::arg("eta"), py::arg("n_eval") = 0, py::arg("base_dir") = ".");

  m.def(
      "run_replicate",
      [](const std::string& config, std::size_t n, std::uint64_t seed, const std::vector<std::string>& names,
         const std::string& base_dir) {
        const auto sc = config_of(config, base_dir);
        std::vector<Method> methods;
        for (const auto& s : names) methods.push_back(parse_method(s));
        if (methods.empty()) methods = sc.methods;
        py::gil_scoped_release release;
        return replicate_to_json(run_replicate(sc.run, n, seed, methods));
      },
      py::arg("config"), py::arg("n"), py::arg("seed"), py::arg("methods") = std::vector<std::string>{},
      py::arg("base_dir") = ".");

  m.def(
      "report",
      [](const std::vector<std::string>& records, const std::string& format) {
        std::vector<ReplicateResult> reps;
        for (const auto& r : records) reps.push_back(replicate_from_json(r));
        if (format != "csv" && format != "markdown") throw ConfigError("format must be csv or markdown");
        return report_table(aggregate(std::move(reps)), format == "csv" ? TableFormat::Csv : TableFormat::Markdown);
      },
      py::arg("records"), py::arg("format") = "csv");

  py::class_<RecommendationService>(m, "Service")
      .def(py::init([](std::optional<std::vector<double>> eta, std::uint64_t seed) {
             ServiceConfig cfg;
             if (eta) cfg.default_eta = *eta;
             cfg.seed = seed;
             return std::make_unique<RecommendationService>(cfg);
           }),
           py::arg("eta") = py::none(), py::arg("seed") = 0)
      .def(
          "handle",
          [](RecommendationService& s, const std::string& method, const std::string& path, const std::string& body) {
            py::gil_scoped_release release;
            const auto r = s.handle(method, path, body);
            return std::make_pair(r.status, r.body);
          },
          py::arg("method"), py::arg("path"), py::arg("body") = "");
}
