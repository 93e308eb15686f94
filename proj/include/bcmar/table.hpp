#pragma once

// Four-pattern categorical data (complete table plus supplemental margins),
// the parameter types shared by every estimator, and exact observed-data
// loglikelihood evaluation.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "bcmar/error.hpp"

namespace bcmar {

using Count = std::int64_t;

// Missingness patterns: P0 both observed, P1 only Z1 observed,
// P2 only Z2 observed, P3 neither observed.
enum class Pattern { Complete = 0, Z1Only = 1, Z2Only = 2, Neither = 3 };

/// J x K complete-case table with a Z1-only margin, a Z2-only margin and the
/// count of cases with both variables missing. Indices are 0-based.
struct MarginTable {
  std::size_t J = 0;
  std::size_t K = 0;
  std::vector<Count> complete;  // row-major, J*K
  std::vector<Count> z1_only;   // J
  std::vector<Count> z2_only;   // K
  Count neither = 0;

  MarginTable() = default;
  MarginTable(std::size_t j, std::size_t k)
      : J(j), K(k), complete(j * k, 0), z1_only(j, 0), z2_only(k, 0) {}

  static MarginTable from_rows(const std::vector<std::vector<Count>>& rows,
                               std::vector<Count> z1, std::vector<Count> z2,
                               Count both_missing);

  Count& cell(std::size_t j, std::size_t k) { return complete[j * K + k]; }
  Count cell(std::size_t j, std::size_t k) const { return complete[j * K + k]; }

  Count complete_row(std::size_t j) const;  // n_(0),j+
  Count complete_col(std::size_t k) const;  // n_(0),+k
  Count n0() const;
  Count n1() const;
  Count n2() const;
  Count n3() const { return neither; }
  Count total() const { return n0() + n1() + n2() + n3(); }

  // Cells in resampling order: complete (row-major), z1_only, z2_only, neither.
  std::size_t observed_cell_count() const { return J * K + J + K + 1; }

  bool operator==(const MarginTable&) const = default;
};

/// Joint cell probabilities theta_jk on the simplex, row-major.
struct CellProbs {
  std::size_t J = 0;
  std::size_t K = 0;
  std::vector<double> p;

  CellProbs() = default;
  CellProbs(std::size_t j, std::size_t k, double fill = 0.0) : J(j), K(k), p(j * k, fill) {}
  CellProbs(std::size_t j, std::size_t k, std::vector<double> values);

  static CellProbs uniform(std::size_t j, std::size_t k);

  double& operator()(std::size_t j, std::size_t k) { return p[j * K + k]; }
  double operator()(std::size_t j, std::size_t k) const { return p[j * K + k]; }
  double row_sum(std::size_t j) const;
  double col_sum(std::size_t k) const;
};

enum class Model { UnrestrictedBCMAR, RestrictedBCMAR, RestrictedMAR, Reduced };

std::string to_string(Model m);
Model model_from_string(const std::string& s);

/// Missingness parameters. phi0/phi1 are always stored per Z1 level so every
/// variant evaluates through the same likelihood expression:
///  - UnrestrictedBCMAR: free phi0[j], phi1[j]
///  - RestrictedBCMAR:   phi0[j] == phi1[j] == phi_j
///  - RestrictedMAR:     phi1[j] == phi^(1) for all j
/// NaN marks a parameter that the data leave unidentified.
struct Mechanism {
  Model variant = Model::UnrestrictedBCMAR;
  double phi = 0.0;
  std::vector<double> phi0;
  std::vector<double> phi1;

  static Mechanism unrestricted(double phi, std::vector<double> phi0, std::vector<double> phi1);
  static Mechanism restricted(double phi, std::vector<double> phi_j);
  static Mechanism restricted_mar(double phi, std::vector<double> phi0, double phi1);

  std::size_t J() const { return phi0.size(); }
  // The shared phi_j of the restricted model.
  const std::vector<double>& phi_shared() const { return phi0; }
  double phi1_common() const { return phi1.empty() ? 0.0 : phi1.front(); }
};

// Throws InvalidProbability / DimensionMismatch when the invariants fail.
void check_probabilities(const CellProbs& theta);
void check_mechanism(const Mechanism& mech);

/// Pattern-mixture parameters; a block is empty when its pattern has no cases.
struct PatternMixtureParams {
  std::size_t J = 0;
  std::size_t K = 0;
  std::optional<std::vector<double>> alpha0;  // J*K
  std::optional<std::vector<double>> beta1;   // J
  std::optional<std::vector<double>> gamma2;  // K
  std::vector<double> pi;                     // 4
};

enum class Estimator { ClosedForm, EM, ReducedLikelihood };
std::string to_string(Estimator e);
Estimator estimator_from_string(const std::string& s);

enum class Feasibility {
  UniqueFeasible,
  MultipleFeasible,
  Infeasible,
  NotApplicable,  // J < K: no noniterative solution
  Unidentified,   // n2 + n3 == 0
  NotAssessed,    // estimator without a feasibility question
};
std::string to_string(Feasibility f);
Feasibility feasibility_from_string(const std::string& s);

struct NamedValue {
  std::string name;
  double value = 0.0;

  bool operator==(const NamedValue&) const = default;
};

struct TracePoint {
  int iteration = 0;
  double loglik = 0.0;
};

struct FitReport {
  Model model = Model::UnrestrictedBCMAR;
  CellProbs theta;
  std::optional<Mechanism> mechanism;
  double loglik = 0.0;  // NaN when no full mechanism point exists
  Estimator estimator = Estimator::EM;
  Feasibility feasibility = Feasibility::NotAssessed;
  bool full_ml = true;  // false when the closed form is not a full-likelihood maximizer
  int iterations = 0;
  bool converged = true;
  std::vector<std::string> warnings;
  std::optional<std::vector<NamedValue>> se;
  std::optional<std::vector<double>> phi1_unconstrained;  // algebraic phi^(1) solve
  int solution_dim = 0;
  std::vector<TracePoint> trace;
};

/// Checks the table invariants. Returns identifiability notes.
std::vector<std::string> validate(const MarginTable& table);

/// Observed-data loglikelihood of the BCMAR model; restricted variants use
/// their constrained mechanism entries. Throws DegenerateLikelihood on a
/// positive count multiplying log(0).
double loglik(const MarginTable& table, const CellProbs& theta, const Mechanism& mech);

/// Block-monotone reduced loglikelihood: patterns P0 and P1 only.
double loglik_reduced(const MarginTable& table, const CellProbs& theta);

// The three factors of the observed likelihood: the reduced term, the
// mechanism-only term over P0/P1, and the P2/P3 residual.
struct LoglikParts {
  double reduced = 0.0;
  double mechanism = 0.0;
  double rest = 0.0;
};
LoglikParts loglik_parts(const MarginTable& table, const CellProbs& theta, const Mechanism& mech);

// Free parameters per variant: JK+2J unrestricted, JK+J restricted BCMAR,
// JK+J+1 restricted MAR (theta contributes JK-1, phi one more).
int parameter_count(Model m, std::size_t J, std::size_t K);

}  // namespace bcmar
