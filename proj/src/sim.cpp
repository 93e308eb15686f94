#include "bcmar/sim.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "bcmar/rng.hpp"

namespace bcmar {

namespace {

std::vector<double> cumulative(const std::vector<double>& p) {
  std::vector<double> c(p.size());
  std::partial_sum(p.begin(), p.end(), c.begin());
  c.back() = 1.0;
  return c;
}

std::size_t draw_index(const std::vector<double>& cum, CounterRng& rng) {
  const double u = rng.uniform();
  const auto it = std::upper_bound(cum.begin(), cum.end(), u);
  return std::min(static_cast<std::size_t>(it - cum.begin()), cum.size() - 1);
}

// Pattern of one case with Z1 = j.
Pattern draw_pattern(const Mechanism& mech, std::size_t j, CounterRng& rng) {
  const bool m1 = rng.bernoulli(mech.phi);
  const bool m2 = rng.bernoulli(m1 ? mech.phi1[j] : mech.phi0[j]);
  if (!m1) return m2 ? Pattern::Z1Only : Pattern::Complete;
  return m2 ? Pattern::Neither : Pattern::Z2Only;
}

std::array<double, 4> class_pattern_probs(const std::vector<double>& class_probs, const Mechanism& mech) {
  std::array<double, 4> pi{};
  for (std::size_t j = 0; j < class_probs.size(); ++j) {
    pi[0] += class_probs[j] * (1.0 - mech.phi) * (1.0 - mech.phi0[j]);
    pi[1] += class_probs[j] * (1.0 - mech.phi) * mech.phi0[j];
    pi[2] += class_probs[j] * mech.phi * (1.0 - mech.phi1[j]);
    pi[3] += class_probs[j] * mech.phi * mech.phi1[j];
  }
  return pi;
}

void check_simulable(const Mechanism& mech) {
  check_mechanism(mech);
  auto nan = [](double x) { return std::isnan(x); };
  if (std::isnan(mech.phi) || std::any_of(mech.phi0.begin(), mech.phi0.end(), nan) ||
      std::any_of(mech.phi1.begin(), mech.phi1.end(), nan))
    throw Error(ErrorCode::InvalidProbability, "simulation needs every mechanism entry");
}

}  // namespace

Mechanism mcar_mechanism(std::size_t J, double phi, double phi2) {
  return Mechanism::unrestricted(phi, std::vector<double>(J, phi2), std::vector<double>(J, phi2));
}

MarginTable simulate_table(const TableSimSpec& spec) {
  check_probabilities(spec.theta);
  check_simulable(spec.mech);
  if (spec.mech.J() != spec.theta.J) throw Error(ErrorCode::DimensionMismatch, "mechanism and theta disagree on J");
  if (spec.n < 0) throw Error(ErrorCode::NegativeCount, "n must be non-negative");

  const std::size_t K = spec.theta.K;
  MarginTable t(spec.theta.J, K);
  const auto cum = cumulative(spec.theta.p);
  CounterRng rng(spec.seed);
  for (Count i = 0; i < spec.n; ++i) {
    const std::size_t cell = draw_index(cum, rng);
    const std::size_t j = cell / K, k = cell % K;
    switch (draw_pattern(spec.mech, j, rng)) {
      case Pattern::Complete: ++t.complete[cell]; break;
      case Pattern::Z1Only: ++t.z1_only[j]; break;
      case Pattern::Z2Only: ++t.z2_only[k]; break;
      case Pattern::Neither: ++t.neither; break;
    }
  }
  return t;
}

ExpFamDataset simulate_expfam(const ExpFamSimSpec& spec) {
  const auto& m = spec.truth;
  check_model(m);
  check_simulable(m.mech);
  if (!m.family->has_sampler())
    throw Error(ErrorCode::InvalidArgument, "family '" + m.family->name() + "' has no sampler");
  if (spec.n < 0) throw Error(ErrorCode::NegativeCount, "n must be non-negative");

  ExpFamDataset data;
  data.J = m.J();
  data.cases.reserve(static_cast<std::size_t>(spec.n));
  const auto cum = cumulative(m.theta1);
  CounterRng rng(spec.seed);
  for (Count i = 0; i < spec.n; ++i) {
    const std::size_t j = draw_index(cum, rng);
    Vec z = m.family->sample(m.theta2[j], rng);
    const Pattern p = draw_pattern(m.mech, j, rng);
    ExpFamCase c;
    if (p == Pattern::Complete || p == Pattern::Z1Only) c.z1 = static_cast<int>(j);
    if (p == Pattern::Complete || p == Pattern::Z2Only) c.z2 = std::move(z);
    data.cases.push_back(std::move(c));
  }
  return data;
}

std::array<double, 4> pattern_probabilities(const CellProbs& theta, const Mechanism& mech) {
  std::vector<double> rows(theta.J);
  for (std::size_t j = 0; j < theta.J; ++j) rows[j] = theta.row_sum(j);
  return class_pattern_probs(rows, mech);
}

std::array<double, 4> pattern_probabilities(const ExpFamModel& model) {
  return class_pattern_probs(model.theta1, model.mech);
}

}  // namespace bcmar
