#pragma once

// Internal helpers shared between translation units; not installed.

#include "bcmar/table.hpp"

namespace bcmar::detail {

inline constexpr double kSimplexTol = 1e-12;

double log_term(Count count, double inner);
LoglikParts loglik_parts_unchecked(const MarginTable& t, const CellProbs& theta, const Mechanism& m);
double loglik_unchecked(const MarginTable& t, const CellProbs& theta, const Mechanism& m);
double loglik_reduced_unchecked(const MarginTable& t, const CellProbs& theta);

}  // namespace bcmar::detail
