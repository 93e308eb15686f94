#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <algorithm>
#include <thread>

#include "bcmar/em.hpp"
#include "bcmar/expfam.hpp"
#include "bcmar/inference.hpp"
#include "bcmar/io.hpp"
#include "bcmar/sim.hpp"

namespace py = pybind11;
using namespace bcmar;

namespace {

// Cases cross the boundary as (class or None, outcome or None) with 1-based classes.
using PyCase = std::pair<std::optional<int>, std::optional<std::vector<double>>>;

ExpFamDataset dataset_from_cases(const std::vector<PyCase>& cases, std::size_t J) {
  ExpFamDataset d;
  for (const auto& [z1, z2] : cases) {
    if (z1 && *z1 < 1) throw Error(ErrorCode::InvalidArgument, "class labels are 1-based");
    d.cases.push_back({z1 ? std::optional<int>(*z1 - 1) : std::nullopt, z2});
    if (z1) d.J = std::max(d.J, static_cast<std::size_t>(*z1));
  }
  if (J > 0) {
    if (d.J > J) throw Error(ErrorCode::InvalidArgument, "class label exceeds J");
    d.J = J;
  }
  return d;
}

std::vector<PyCase> cases_from_dataset(const ExpFamDataset& d) {
  std::vector<PyCase> out;
  out.reserve(d.cases.size());
  for (const auto& c : d.cases) out.emplace_back(c.z1 ? std::optional<int>(*c.z1 + 1) : std::nullopt, c.z2);
  return out;
}

EmConfig em_config(int max_iters, double tol_param, double tol_loglik, int starts, std::uint64_t seed) {
  EmConfig cfg;
  cfg.max_iters = max_iters;
  cfg.tol_param = tol_param;
  cfg.tol_loglik = tol_loglik;
  cfg.starts = starts;
  cfg.seed = seed;
  return cfg;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Contingency tables with missing margins under block-conditional MAR.";

  py::register_exception<Error>(m, "BcmarError", PyExc_ValueError);

  const EmConfig d;
  m.def(
      "fit",
      [](const std::string& table, const std::string& model, int max_iters, double tol_param, double tol_loglik,
         int starts, std::uint64_t seed) {
        const auto t = io::table_from_json(table);
        py::gil_scoped_release release;
        return io::report_to_json(fit(t, model_from_string(model), em_config(max_iters, tol_param, tol_loglik, starts, seed)));
      },
      py::arg("table"), py::arg("model") = "unrestricted-bcmar", py::arg("max_iters") = d.max_iters,
      py::arg("tol_param") = d.tol_param, py::arg("tol_loglik") = d.tol_loglik, py::arg("starts") = d.starts,
      py::arg("seed") = d.seed, "Fit a model to a table given as JSON; returns the report as JSON.");

  m.def(
      "report_text", [](const std::string& report) { return io::report_to_text(io::report_from_json(report)); },
      py::arg("report"), "Render a JSON fit report as text.");

  m.def(
      "loglik",
      [](const std::string& table, const std::string& report) {
        const auto truth = io::truth_from_json(report);
        return loglik(io::table_from_json(table), truth.theta, truth.mech);
      },
      py::arg("table"), py::arg("params"), "Observed-data loglikelihood at the theta and mechanism of a report.");

  m.def(
      "lrt",
      [](const std::string& table, const std::string& full, const std::string& restricted) {
        const auto t = io::table_from_json(table);
        py::gil_scoped_release release;
        return io::lrt_to_json(lrt(fit(t, model_from_string(full)), fit(t, model_from_string(restricted))));
      },
      py::arg("table"), py::arg("full") = "unrestricted-bcmar", py::arg("restricted") = "restricted-bcmar",
      "Likelihood-ratio test between two nested models.");

  m.def(
      "bootstrap",
      [](const std::string& table, const std::string& model, int replicates, std::uint64_t seed, int threads) {
        const auto t = io::table_from_json(table);
        BootstrapConfig cfg;
        cfg.model = model_from_string(model);
        cfg.replicates = replicates;
        cfg.seed = seed;
        cfg.threads = threads > 0 ? threads : static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
        py::gil_scoped_release release;
        return io::bootstrap_to_json(bootstrap_se(t, cfg));
      },
      py::arg("table"), py::arg("model") = "unrestricted-bcmar", py::arg("replicates") = 1000, py::arg("seed") = 0,
      py::arg("threads") = 0, "Nonparametric bootstrap standard errors.");

  m.def(
      "simulate",
      [](Count n, const std::string& truth, std::uint64_t seed) {
        const auto tr = io::truth_from_json(truth);
        return io::table_to_json(simulate_table({n, tr.theta, tr.mech, seed}));
      },
      py::arg("n"), py::arg("truth"), py::arg("seed") = 0, "Draw a table of n cases from a theta and mechanism.");

  m.def("chi_square_upper_tail", &chi_square_upper_tail, py::arg("x"), py::arg("df"));

  m.def(
      "expfam_fit",
      [](const std::vector<PyCase>& cases, const std::string& family, std::optional<double> variance, std::size_t J,
         bool reduced, int max_iters, double tol_param, double tol_loglik) {
        const auto data = dataset_from_cases(cases, J);
        const FamilyPtr fam = family == "poisson" ? family_poisson()
                              : family == "normal"
                                  ? family_normal(variance)
                                  : throw Error(ErrorCode::InvalidArgument, "unknown family " + family);
        py::gil_scoped_release release;
        if (reduced) return io::expfam_fit_to_json(expfam_reduced_fit(data, fam));
        return io::expfam_fit_to_json(
            expfam_em(data, expfam_default_start(data, fam), em_config(max_iters, tol_param, tol_loglik, 1, 0)));
      },
      py::arg("cases"), py::arg("family") = "normal", py::arg("variance") = std::nullopt, py::arg("J") = 0,
      py::arg("reduced") = false, py::arg("max_iters") = d.max_iters, py::arg("tol_param") = d.tol_param,
      py::arg("tol_loglik") = d.tol_loglik, "Fit the exponential-family model to (class, outcome) cases.");

  m.def(
      "expfam_simulate",
      [](Count n, const std::string& truth, std::uint64_t seed) {
        return cases_from_dataset(simulate_expfam({n, io::expfam_model_from_json(truth), seed}));
      },
      py::arg("n"), py::arg("truth"), py::arg("seed") = 0, "Draw (class, outcome) cases from a model given as JSON.");
}
