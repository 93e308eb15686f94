#pragma once

// Noniterative estimation for the unrestricted BCMAR model through the
// pattern-mixture reparametrization.

#include <optional>
#include <vector>

#include "bcmar/table.hpp"

namespace bcmar {

/// Pattern-mixture ML estimates: block proportions and pattern shares.
PatternMixtureParams pattern_mixture_mle(const MarginTable& table);

// Maps pattern-mixture parameters back to (theta, phi, phi^(0)). Rows with
// no mass in P0 or P1 get theta = 0 and an unidentified (NaN) phi^(0).
struct SelectionParams {
  CellProbs theta;
  double phi = 0.0;
  std::vector<double> phi0;
  std::vector<double> phi1_rhs;  // P(M2=0, Z2=k | M1=1); empty when gamma2 undefined
};
SelectionParams selection_from_pattern_mixture(const PatternMixtureParams& pm);

/// Complete-case conditional of Z2 given Z1 times the P0+P1 marginal of Z1.
/// This maximizes the block-monotone reduced likelihood.
CellProbs closed_form_theta(const MarginTable& table);

struct ClosedFormMechanism {
  double phi = 0.0;
  std::vector<double> phi0;  // NaN for rows empty in both P0 and P1
};
ClosedFormMechanism closed_form_mechanism(const MarginTable& table);

struct FeasibilityResult {
  Feasibility status = Feasibility::Infeasible;
  std::optional<std::vector<double>> phi1_point;        // clamped representative
  std::optional<std::vector<double>> phi1_unconstrained; // algebraic / min-norm solve
  int solution_dim = 0;
  int rank = 0;
  double relative_residual = 0.0;
};

/// Solves sum_j (1 - phi1_j) theta_jk = n_(2),+k / (n2 + n3) and classifies
/// the solution set against the unit cube.
FeasibilityResult solve_phi1(const CellProbs& theta_hat, const MarginTable& table);

/// Closed-form fit. full_ml is false when the phi^(1) equations have no
/// solution in the cube; the caller should fall through to EM.
FitReport fit_unrestricted_closed_form(const MarginTable& table);

namespace feasibility {

inline constexpr double kPivotTol = 1e-10;
inline constexpr double kBoxSlack = 1e-9;
inline constexpr double kResidualTol = 1e-8;

// Phase-one simplex: does {x : A x = b, lo <= x <= hi} have a point?
// A is m x n row-major. Returns a feasible vertex when one exists.
std::optional<std::vector<double>> phase_one(const std::vector<double>& A, std::size_t m,
                                             std::size_t n, const std::vector<double>& b,
                                             double lo, double hi, double tol);

// Euclidean projection of `target` onto {A x = b} intersected with [lo,hi]^n,
// by Dykstra's alternating projections. Assumes the set is nonempty.
std::vector<double> project_affine_box(const std::vector<double>& A, std::size_t m, std::size_t n,
                                       const std::vector<double>& b, double lo, double hi,
                                       std::vector<double> target);

}  // namespace feasibility

}  // namespace bcmar
