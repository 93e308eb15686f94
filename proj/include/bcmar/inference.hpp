#pragma once

// Likelihood-ratio tests between nested variants, bootstrap standard errors,
// and information-based standard errors for the reduced-likelihood fit.

#include <cstdint>
#include <string>
#include <vector>

#include "bcmar/em.hpp"
#include "bcmar/table.hpp"

namespace bcmar {

struct LrtResult {
  double stat = 0.0;
  int df = 0;
  double p_value = 1.0;
  Model full = Model::UnrestrictedBCMAR;
  Model restricted = Model::RestrictedBCMAR;
  double loglik_full = 0.0;
  double loglik_restricted = 0.0;
};

/// Upper tail P(X >= x) of a chi-square variate with df degrees of freedom.
double chi_square_upper_tail(double x, int df);

/// -2 (l_restricted - l_full) against chi-square on the parameter-count
/// difference. The restricted model must be a submodel of the full one.
LrtResult lrt(const FitReport& full, const FitReport& restricted);

/// Parameter names and values in the order used by bootstrap and reports.
/// Unidentified parameters come back as NaN.
std::vector<NamedValue> flatten_parameters(const FitReport& rep);

struct BootstrapConfig {
  Model model = Model::UnrestrictedBCMAR;
  int replicates = 1000;
  std::uint64_t seed = 0;
  EmConfig em{};
  int threads = 1;
};

struct BootstrapResult {
  Model model = Model::UnrestrictedBCMAR;
  int replicates = 0;            // requested
  int failures = 0;              // replicates whose refit threw
  std::vector<NamedValue> estimate;  // fit on the original table
  std::vector<NamedValue> se;
  std::vector<int> contributing; // replicates that identified each parameter
  double infeasible_fraction = 0.0;
  std::uint64_t seed = 0;
  std::vector<std::string> warnings;
};

/// Draws one case-level multinomial resample of the observed cells.
MarginTable resample_table(const MarginTable& table, std::uint64_t seed, std::uint64_t replicate);

/// Nonparametric bootstrap. For the unrestricted model each replicate tries
/// the closed form first and falls back to EM when phi^(1) leaves the cube.
/// Results are bit-identical for a given seed regardless of thread count.
BootstrapResult bootstrap_se(const MarginTable& table, const BootstrapConfig& cfg);

/// Delta-method standard errors of theta from the inverse observed
/// information of the reduced loglikelihood, with a central-difference
/// Hessian on JK-1 free cells.
std::vector<double> reduced_information_se(const MarginTable& table, const CellProbs& theta_hat);

// Central-difference Hessian of the reduced loglikelihood in the free-cell
// parametrization; `reference` is the dropped cell index.
std::vector<double> reduced_loglik_hessian(const MarginTable& table, const CellProbs& theta_hat,
                                           std::size_t reference);

}  // namespace bcmar
