#pragma once

// EM algorithms for the unrestricted BCMAR, restricted BCMAR and restricted
// MAR models, plus the reduced-likelihood fit.

#include <cstdint>
#include <span>
#include <vector>

#include "bcmar/table.hpp"

namespace bcmar {

struct EmConfig {
  int max_iters = 10000;
  double tol_param = 1e-8;   // max absolute parameter change
  double tol_loglik = 1e-10; // loglik increase
  int starts = 1;
  std::uint64_t seed = 0;    // jitter for starts beyond the first

  void check() const;
};

// Fractional allocation of the partially classified counts, row-major J*K.
struct Allocation {
  std::vector<double> n1;
  std::vector<double> n2;
  std::vector<double> n3;
};

/// One E step. p2_weight[j] is P(M2=0 | Z1=j, M1=1) and p3_weight[j] is
/// P(M2=1 | Z1=j, M1=1), up to a common factor; each block's margin is
/// preserved exactly whenever its denominator is positive.
Allocation e_step(const MarginTable& table, const CellProbs& theta,
                  std::span<const double> p2_weight, std::span<const double> p3_weight);

// theta M step shared by every variant.
CellProbs m_step_theta(const MarginTable& table, const Allocation& alloc);

FitReport em_unrestricted(const MarginTable& table, const EmConfig& cfg = {});
FitReport em_restricted(const MarginTable& table, const EmConfig& cfg = {});
FitReport em_restricted_mar(const MarginTable& table, const EmConfig& cfg = {});

/// Maximizer of the block-monotone reduced likelihood, no mechanism.
FitReport reduced_fit(const MarginTable& table);

/// Dispatch by model tag. Unrestricted tries the closed form first and runs
/// EM only when the closed form is not a full ML estimate.
FitReport fit(const MarginTable& table, Model model, const EmConfig& cfg = {});

// Parameters after one EM iteration; the mechanism carries the variant.
struct EmIterate {
  CellProbs theta;
  Mechanism mech;
};

// Start value used by each EM variant. The second start onward draws theta
// uniformly from the simplex and the second-block missingness probabilities
// uniformly in (0.05, 0.95).
EmIterate em_start(const MarginTable& table, Model model, int start_index, std::uint64_t seed);

// A single E+M update of the given variant.
EmIterate em_update(const MarginTable& table, const EmIterate& current);

}  // namespace bcmar
