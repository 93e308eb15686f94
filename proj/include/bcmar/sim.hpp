#pragma once

// Generators for four-pattern data under the BCMAR mechanism family.
//
// Per case: (Z1, Z2) from the truth, M1 ~ Bernoulli(phi), then
// M2 ~ Bernoulli(phi0[Z1]) when Z1 is observed and Bernoulli(phi1[Z1]) when
// it is not. MCAR and restricted MAR are special cases of the mechanism.

#include <array>
#include <cstdint>

#include "bcmar/expfam.hpp"
#include "bcmar/table.hpp"

namespace bcmar {

struct TableSimSpec {
  Count n = 0;
  CellProbs theta;
  Mechanism mech;
  std::uint64_t seed = 0;
};

struct ExpFamSimSpec {
  Count n = 0;
  ExpFamModel truth;
  std::uint64_t seed = 0;
};

/// Missingness that ignores Z1 entirely: every phi0[j] = phi1[j] = phi2.
Mechanism mcar_mechanism(std::size_t J, double phi, double phi2);

MarginTable simulate_table(const TableSimSpec& spec);
ExpFamDataset simulate_expfam(const ExpFamSimSpec& spec);

/// Probabilities of P0..P3 for a single case.
std::array<double, 4> pattern_probabilities(const CellProbs& theta, const Mechanism& mech);
std::array<double, 4> pattern_probabilities(const ExpFamModel& model);

}  // namespace bcmar
