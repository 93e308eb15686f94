#include "cli.hpp"

#include <algorithm>
#include <cstdlib>
#include <optional>
#include <thread>

#include <CLI11.hpp>

#include "bcmar/em.hpp"
#include "bcmar/expfam.hpp"
#include "bcmar/inference.hpp"
#include "bcmar/io.hpp"
#include "bcmar/sim.hpp"

namespace bcmar::cli {

namespace {

struct Options {
  std::string model = "unrestricted-bcmar";
  std::string full = "unrestricted-bcmar";
  std::string restricted = "restricted-bcmar";
  std::string input;
  std::string output;
  std::string truth;
  std::string format = "json";
  std::string family = "normal";
  std::optional<double> variance;
  std::size_t classes = 0;
  bool reduced = false;
  int replicates = 1000;
  int threads = 0;
  std::uint64_t seed = 0;
  Count n = 0;
  EmConfig em;
};

void add_em_flags(CLI::App* cmd, Options& o) {
  cmd->add_option("--max-iters", o.em.max_iters, "EM iteration cap")->capture_default_str();
  cmd->add_option("--tol-param", o.em.tol_param, "EM parameter-change tolerance")->capture_default_str();
  cmd->add_option("--tol-loglik", o.em.tol_loglik, "EM loglik-gain tolerance")->capture_default_str();
  cmd->add_option("--starts", o.em.starts, "number of EM starting points")->capture_default_str();
}

void add_output_flags(CLI::App* cmd, Options& o) {
  cmd->add_option("--output", o.output, "write the report here instead of stdout");
  cmd->add_option("--format", o.format, "report format")
      ->check(CLI::IsMember({"json", "text"}))
      ->capture_default_str();
}

const std::vector<std::string> kModels = {"unrestricted-bcmar", "restricted-bcmar", "restricted-mar", "reduced"};

int thread_count(int requested) {
  int n = requested > 0 ? requested : static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
  if (const char* cap = std::getenv("BCMAR_THREADS")) {
    const int c = std::atoi(cap);
    if (c > 0) n = std::min(n, c);
  }
  return n;
}

void emit(const Options& o, const std::string& content, std::ostream& out) {
  if (o.output.empty()) out << content;
  else io::write_file(o.output, content);
}

int code_for(ErrorCode c) {
  switch (c) {
    case ErrorCode::DegenerateLikelihood: return kDegenerate;
    case ErrorCode::FailedFit: return kNotConverged;
    default: return kInputError;
  }
}

int cmd_fit(const Options& o, std::ostream& out) {
  const MarginTable t = io::table_from_json(io::read_file(o.input));
  const FitReport rep = fit(t, model_from_string(o.model), o.em);
  emit(o, o.format == "json" ? io::report_to_json(rep) : io::report_to_text(rep), out);
  return rep.converged ? kSuccess : kNotConverged;
}

int cmd_lrt(const Options& o, std::ostream& out) {
  const MarginTable t = io::table_from_json(io::read_file(o.input));
  const FitReport full = fit(t, model_from_string(o.full), o.em);
  const FitReport restricted = fit(t, model_from_string(o.restricted), o.em);
  if (!full.converged || !restricted.converged) return kNotConverged;
  const LrtResult res = lrt(full, restricted);
  emit(o, o.format == "json" ? io::lrt_to_json(res) : io::lrt_to_text(res), out);
  return kSuccess;
}

int cmd_bootstrap(const Options& o, std::ostream& out) {
  const MarginTable t = io::table_from_json(io::read_file(o.input));
  BootstrapConfig cfg;
  cfg.model = model_from_string(o.model);
  cfg.replicates = o.replicates;
  cfg.seed = o.seed;
  cfg.em = o.em;
  cfg.threads = thread_count(o.threads);
  const BootstrapResult res = bootstrap_se(t, cfg);
  emit(o, o.format == "json" ? io::bootstrap_to_json(res) : io::bootstrap_to_text(res), out);
  return kSuccess;
}

int cmd_simulate(const Options& o, std::ostream& out) {
  const auto truth = io::truth_from_json(io::read_file(o.truth));
  const MarginTable t = simulate_table({o.n, truth.theta, truth.mech, o.seed});
  emit(o, io::table_to_json(t), out);
  return kSuccess;
}

int cmd_expfam_fit(const Options& o, std::ostream& out) {
  FamilyPtr family = o.family == "poisson" ? family_poisson() : family_normal(o.variance);
  const ExpFamDataset data = io::dataset_from_csv(io::read_file(o.input), o.classes);
  ExpFamFit res = o.reduced ? expfam_reduced_fit(data, family)
                            : expfam_em(data, expfam_default_start(data, family), o.em);
  emit(o, o.format == "json" ? io::expfam_fit_to_json(res) : io::expfam_fit_to_text(res), out);
  return res.converged ? kSuccess : kNotConverged;
}

int cmd_expfam_simulate(const Options& o, std::ostream& out) {
  const ExpFamModel truth = io::expfam_model_from_json(io::read_file(o.truth));
  emit(o, io::dataset_to_csv(simulate_expfam({o.n, truth, o.seed})), out);
  return kSuccess;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  Options o;
  CLI::App app{"Maximum likelihood for two-block categorical data with BCMAR missingness", "bcmar"};
  app.require_subcommand(1);

  auto* fit_cmd = app.add_subcommand("fit", "fit one model to a table");
  fit_cmd->add_option("--model", o.model)->check(CLI::IsMember(kModels))->capture_default_str();
  fit_cmd->add_option("--input", o.input, "table JSON")->required();
  add_em_flags(fit_cmd, o);
  fit_cmd->add_option("--seed", o.em.seed, "seed for extra EM starts");
  add_output_flags(fit_cmd, o);

  auto* lrt_cmd = app.add_subcommand("lrt", "likelihood-ratio test between nested models");
  lrt_cmd->add_option("--full", o.full)->check(CLI::IsMember(kModels))->capture_default_str();
  lrt_cmd->add_option("--restricted", o.restricted)->check(CLI::IsMember(kModels))->capture_default_str();
  lrt_cmd->add_option("--input", o.input, "table JSON")->required();
  add_em_flags(lrt_cmd, o);
  add_output_flags(lrt_cmd, o);

  auto* boot_cmd = app.add_subcommand("bootstrap", "nonparametric bootstrap standard errors");
  boot_cmd->add_option("--model", o.model)->check(CLI::IsMember(kModels))->capture_default_str();
  boot_cmd->add_option("--input", o.input, "table JSON")->required();
  boot_cmd->add_option("--B", o.replicates, "replicates")->check(CLI::PositiveNumber)->capture_default_str();
  boot_cmd->add_option("--seed", o.seed)->capture_default_str();
  boot_cmd->add_option("--threads", o.threads, "worker threads (BCMAR_THREADS caps this)");
  add_em_flags(boot_cmd, o);
  add_output_flags(boot_cmd, o);

  auto* sim_cmd = app.add_subcommand("simulate", "draw a table from a known truth");
  sim_cmd->add_option("--n", o.n, "number of cases")->required()->check(CLI::NonNegativeNumber);
  sim_cmd->add_option("--truth", o.truth, "JSON with theta and mechanism (a fit report works)")->required();
  sim_cmd->add_option("--seed", o.seed)->capture_default_str();
  sim_cmd->add_option("--output", o.output, "table JSON path");

  auto* ef_cmd = app.add_subcommand("expfam-fit", "fit the categorical / exponential-family model");
  ef_cmd->add_option("--input", o.input, "CSV with z1 and z2 columns")->required();
  ef_cmd->add_option("--family", o.family)->check(CLI::IsMember({"normal", "poisson"}))->capture_default_str();
  ef_cmd->add_option("--variance", o.variance, "known normal variance (omit to estimate it)");
  ef_cmd->add_option("--J", o.classes, "number of Z1 classes (default: largest label)");
  ef_cmd->add_flag("--reduced", o.reduced, "reduced-likelihood fit from P0 and P1 only");
  add_em_flags(ef_cmd, o);
  add_output_flags(ef_cmd, o);

  auto* es_cmd = app.add_subcommand("expfam-simulate", "draw a case-level dataset from a known model");
  es_cmd->add_option("--n", o.n, "number of cases")->required()->check(CLI::NonNegativeNumber);
  es_cmd->add_option("--truth", o.truth, "model JSON")->required();
  es_cmd->add_option("--seed", o.seed)->capture_default_str();
  es_cmd->add_option("--output", o.output, "CSV path");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e, out, err);
    return rc == 0 ? kSuccess : kInputError;
  }

  try {
    if (fit_cmd->parsed()) return cmd_fit(o, out);
    if (lrt_cmd->parsed()) return cmd_lrt(o, out);
    if (boot_cmd->parsed()) return cmd_bootstrap(o, out);
    if (sim_cmd->parsed()) return cmd_simulate(o, out);
    if (ef_cmd->parsed()) return cmd_expfam_fit(o, out);
    if (es_cmd->parsed()) return cmd_expfam_simulate(o, out);
  } catch (const Error& e) {
    err << "error (" << to_string(e.code()) << "): " << e.what() << "\n";
    return code_for(e.code());
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kInternal;
  }
  return kInputError;
}

}  // namespace bcmar::cli
