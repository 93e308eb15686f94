#include "bcmar/table.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

#include "detail.hpp"

namespace bcmar {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::NegativeCount: return "NegativeCount";
    case ErrorCode::ZeroTotal: return "ZeroTotal";
    case ErrorCode::DimensionMismatch: return "DimensionMismatch";
    case ErrorCode::InvalidProbability: return "InvalidProbability";
    case ErrorCode::DegenerateLikelihood: return "DegenerateLikelihood";
    case ErrorCode::UndefinedConditional: return "UndefinedConditional";
    case ErrorCode::SingularInformation: return "SingularInformation";
    case ErrorCode::DomainError: return "DomainError";
    case ErrorCode::NonNested: return "NonNested";
    case ErrorCode::FailedFit: return "FailedFit";
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::Parse: return "Parse";
  }
  return "Unknown";
}

MarginTable MarginTable::from_rows(const std::vector<std::vector<Count>>& rows,
                                   std::vector<Count> z1, std::vector<Count> z2,
                                   Count both_missing) {
  MarginTable t;
  t.J = rows.size();
  t.K = rows.empty() ? 0 : rows.front().size();
  for (const auto& r : rows) {
    if (r.size() != t.K) throw Error(ErrorCode::DimensionMismatch, "ragged complete-case table");
    t.complete.insert(t.complete.end(), r.begin(), r.end());
  }
  t.z1_only = std::move(z1);
  t.z2_only = std::move(z2);
  t.neither = both_missing;
  return t;
}

Count MarginTable::complete_row(std::size_t j) const {
  Count s = 0;
  for (std::size_t k = 0; k < K; ++k) s += cell(j, k);
  return s;
}

Count MarginTable::complete_col(std::size_t k) const {
  Count s = 0;
  for (std::size_t j = 0; j < J; ++j) s += cell(j, k);
  return s;
}

Count MarginTable::n0() const { return std::accumulate(complete.begin(), complete.end(), Count{0}); }
Count MarginTable::n1() const { return std::accumulate(z1_only.begin(), z1_only.end(), Count{0}); }
Count MarginTable::n2() const { return std::accumulate(z2_only.begin(), z2_only.end(), Count{0}); }

CellProbs::CellProbs(std::size_t j, std::size_t k, std::vector<double> values)
    : J(j), K(k), p(std::move(values)) {
  if (p.size() != J * K) throw Error(ErrorCode::DimensionMismatch, "theta must have J*K entries");
}

CellProbs CellProbs::uniform(std::size_t j, std::size_t k) {
  return CellProbs(j, k, 1.0 / static_cast<double>(j * k));
}

double CellProbs::row_sum(std::size_t j) const {
  double s = 0.0;
  for (std::size_t k = 0; k < K; ++k) s += (*this)(j, k);
  return s;
}

double CellProbs::col_sum(std::size_t k) const {
  double s = 0.0;
  for (std::size_t j = 0; j < J; ++j) s += (*this)(j, k);
  return s;
}

std::string to_string(Model m) {
  switch (m) {
    case Model::UnrestrictedBCMAR: return "unrestricted-bcmar";
    case Model::RestrictedBCMAR: return "restricted-bcmar";
    case Model::RestrictedMAR: return "restricted-mar";
    case Model::Reduced: return "reduced";
  }
  return "?";
}

Model model_from_string(const std::string& s) {
  if (s == "unrestricted-bcmar") return Model::UnrestrictedBCMAR;
  if (s == "restricted-bcmar") return Model::RestrictedBCMAR;
  if (s == "restricted-mar") return Model::RestrictedMAR;
  if (s == "reduced") return Model::Reduced;
  throw Error(ErrorCode::InvalidArgument, "unknown model '" + s + "'");
}

std::string to_string(Estimator e) {
  switch (e) {
    case Estimator::ClosedForm: return "closed-form";
    case Estimator::EM: return "em";
    case Estimator::ReducedLikelihood: return "reduced-likelihood";
  }
  return "?";
}

Estimator estimator_from_string(const std::string& s) {
  if (s == "closed-form") return Estimator::ClosedForm;
  if (s == "em") return Estimator::EM;
  if (s == "reduced-likelihood") return Estimator::ReducedLikelihood;
  throw Error(ErrorCode::Parse, "unknown estimator '" + s + "'");
}

std::string to_string(Feasibility f) {
  switch (f) {
    case Feasibility::UniqueFeasible: return "unique-feasible";
    case Feasibility::MultipleFeasible: return "multiple-feasible";
    case Feasibility::Infeasible: return "infeasible";
    case Feasibility::NotApplicable: return "not-applicable";
    case Feasibility::Unidentified: return "unidentified";
    case Feasibility::NotAssessed: return "not-assessed";
  }
  return "?";
}

Feasibility feasibility_from_string(const std::string& s) {
  for (auto f : {Feasibility::UniqueFeasible, Feasibility::MultipleFeasible, Feasibility::Infeasible,
                 Feasibility::NotApplicable, Feasibility::Unidentified, Feasibility::NotAssessed}) {
    if (to_string(f) == s) return f;
  }
  throw Error(ErrorCode::Parse, "unknown feasibility '" + s + "'");
}

Mechanism Mechanism::unrestricted(double phi, std::vector<double> phi0, std::vector<double> phi1) {
  if (phi0.size() != phi1.size()) throw Error(ErrorCode::DimensionMismatch, "phi0/phi1 length");
  return Mechanism{Model::UnrestrictedBCMAR, phi, std::move(phi0), std::move(phi1)};
}

Mechanism Mechanism::restricted(double phi, std::vector<double> phi_j) {
  auto copy = phi_j;
  return Mechanism{Model::RestrictedBCMAR, phi, std::move(phi_j), std::move(copy)};
}

Mechanism Mechanism::restricted_mar(double phi, std::vector<double> phi0, double phi1) {
  std::vector<double> p1(phi0.size(), phi1);
  return Mechanism{Model::RestrictedMAR, phi, std::move(phi0), std::move(p1)};
}

namespace {

bool is_probability(double x) { return std::isnan(x) || (x >= 0.0 && x <= 1.0); }

}  // namespace

void check_probabilities(const CellProbs& theta) {
  if (theta.p.size() != theta.J * theta.K || theta.p.empty())
    throw Error(ErrorCode::DimensionMismatch, "theta has wrong size");
  double sum = 0.0;
  for (double x : theta.p) {
    if (!(x >= 0.0 && x <= 1.0)) throw Error(ErrorCode::InvalidProbability, "theta entry outside [0,1]");
    sum += x;
  }
  if (std::abs(sum - 1.0) > detail::kSimplexTol) {
    std::ostringstream os;
    os << "theta sums to " << sum << ", not 1";
    throw Error(ErrorCode::InvalidProbability, os.str());
  }
}

void check_mechanism(const Mechanism& mech) {
  if (mech.phi0.size() != mech.phi1.size())
    throw Error(ErrorCode::DimensionMismatch, "phi0/phi1 length");
  if (!is_probability(mech.phi)) throw Error(ErrorCode::InvalidProbability, "phi outside [0,1]");
  for (std::size_t j = 0; j < mech.phi0.size(); ++j) {
    if (!is_probability(mech.phi0[j]) || !is_probability(mech.phi1[j]))
      throw Error(ErrorCode::InvalidProbability, "mechanism entry outside [0,1]");
  }
  auto same = [](double a, double b) { return (std::isnan(a) && std::isnan(b)) || a == b; };
  if (mech.variant == Model::RestrictedBCMAR) {
    for (std::size_t j = 0; j < mech.phi0.size(); ++j)
      if (!same(mech.phi0[j], mech.phi1[j]))
        throw Error(ErrorCode::InvalidArgument, "restricted BCMAR requires phi0 == phi1");
  }
  if (mech.variant == Model::RestrictedMAR) {
    for (double x : mech.phi1)
      if (!same(x, mech.phi1.front()))
        throw Error(ErrorCode::InvalidArgument, "restricted MAR requires a common phi1");
  }
  if (mech.variant == Model::Reduced)
    throw Error(ErrorCode::InvalidArgument, "the reduced fit has no mechanism");
}

std::vector<std::string> validate(const MarginTable& table) {
  if (table.J == 0 || table.K == 0) throw Error(ErrorCode::DimensionMismatch, "J and K must be positive");
  if (table.complete.size() != table.J * table.K || table.z1_only.size() != table.J ||
      table.z2_only.size() != table.K)
    throw Error(ErrorCode::DimensionMismatch, "block sizes do not match J and K");
  auto negative = [](Count c) { return c < 0; };
  if (std::any_of(table.complete.begin(), table.complete.end(), negative) ||
      std::any_of(table.z1_only.begin(), table.z1_only.end(), negative) ||
      std::any_of(table.z2_only.begin(), table.z2_only.end(), negative) || table.neither < 0)
    throw Error(ErrorCode::NegativeCount, "counts must be nonnegative");
  if (table.total() < 1) throw Error(ErrorCode::ZeroTotal, "table has no cases");

  std::vector<std::string> notes;
  if (table.n2() == 0 && table.n3() == 0)
    notes.emplace_back("block monotone; phi^(1) unidentified");
  for (std::size_t j = 0; j < table.J; ++j) {
    if (table.complete_row(j) == 0)
      notes.push_back("no complete cases in Z1 row " + std::to_string(j + 1) +
                      "; conditional of Z2 given Z1 unidentified from complete cases");
  }
  return notes;
}

namespace detail {

double log_term(Count count, double inner) {
  if (count == 0) return 0.0;
  if (!(inner > 0.0)) return -std::numeric_limits<double>::infinity();
  return static_cast<double>(count) * std::log(inner);
}

LoglikParts loglik_parts_unchecked(const MarginTable& t, const CellProbs& theta, const Mechanism& m) {
  LoglikParts parts;
  const double phi = m.phi;
  for (std::size_t j = 0; j < t.J; ++j) {
    const double row = theta.row_sum(j);
    for (std::size_t k = 0; k < t.K; ++k) parts.reduced += log_term(t.cell(j, k), theta(j, k));
    parts.reduced += log_term(t.z1_only[j], row);
    const Count n0j = t.complete_row(j);
    parts.mechanism += log_term(n0j, 1.0 - m.phi0[j]) + log_term(t.z1_only[j], m.phi0[j]);
  }
  parts.mechanism += log_term(t.n0() + t.n1(), 1.0 - phi);
  for (std::size_t k = 0; k < t.K; ++k) {
    if (t.z2_only[k] == 0) continue;
    double s = 0.0;
    for (std::size_t j = 0; j < t.J; ++j) s += theta(j, k) * (1.0 - m.phi1[j]);
    parts.rest += log_term(t.z2_only[k], phi * s);
  }
  if (t.neither > 0) {
    double s = 0.0;
    for (std::size_t j = 0; j < t.J; ++j) s += theta.row_sum(j) * m.phi1[j];
    parts.rest += log_term(t.neither, phi * s);
  }
  return parts;
}

double loglik_unchecked(const MarginTable& t, const CellProbs& theta, const Mechanism& m) {
  auto p = loglik_parts_unchecked(t, theta, m);
  return p.reduced + p.mechanism + p.rest;
}

double loglik_reduced_unchecked(const MarginTable& t, const CellProbs& theta) {
  double ll = 0.0;
  for (std::size_t j = 0; j < t.J; ++j) {
    for (std::size_t k = 0; k < t.K; ++k) ll += log_term(t.cell(j, k), theta(j, k));
    ll += log_term(t.z1_only[j], theta.row_sum(j));
  }
  return ll;
}

}  // namespace detail

namespace {

void check_dims(const MarginTable& t, const CellProbs& theta) {
  if (theta.J != t.J || theta.K != t.K)
    throw Error(ErrorCode::DimensionMismatch, "theta dimensions differ from the table");
}

double finite_or_throw(double ll) {
  if (std::isnan(ll))
    throw Error(ErrorCode::DegenerateLikelihood, "likelihood depends on an unidentified parameter");
  if (std::isinf(ll))
    throw Error(ErrorCode::DegenerateLikelihood, "positive count multiplies log(0)");
  return ll;
}

}  // namespace

LoglikParts loglik_parts(const MarginTable& table, const CellProbs& theta, const Mechanism& mech) {
  check_dims(table, theta);
  check_probabilities(theta);
  check_mechanism(mech);
  if (mech.J() != table.J) throw Error(ErrorCode::DimensionMismatch, "mechanism length differs from J");
  auto parts = detail::loglik_parts_unchecked(table, theta, mech);
  finite_or_throw(parts.reduced + parts.mechanism + parts.rest);
  return parts;
}

double loglik(const MarginTable& table, const CellProbs& theta, const Mechanism& mech) {
  auto p = loglik_parts(table, theta, mech);
  return p.reduced + p.mechanism + p.rest;
}

double loglik_reduced(const MarginTable& table, const CellProbs& theta) {
  check_dims(table, theta);
  check_probabilities(theta);
  return finite_or_throw(detail::loglik_reduced_unchecked(table, theta));
}

int parameter_count(Model m, std::size_t J, std::size_t K) {
  const int jk = static_cast<int>(J * K);
  const int j = static_cast<int>(J);
  switch (m) {
    case Model::UnrestrictedBCMAR: return jk + 2 * j;
    case Model::RestrictedBCMAR: return jk + j;
    case Model::RestrictedMAR: return jk + j + 1;
    case Model::Reduced: return jk - 1;
  }
  return 0;
}

}  // namespace bcmar
