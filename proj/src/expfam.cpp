#include "bcmar/expfam.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <random>

#include "bcmar/rng.hpp"

namespace bcmar {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();
constexpr double kNegInf = -std::numeric_limits<double>::infinity();
constexpr double kEmptyClass = 1e-12;
constexpr double kBoundaryNudge = 1e-8;
constexpr double kInteriorBlend = 1e-2;

double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double safe_log(double x) { return x > 0.0 ? std::log(x) : kNegInf; }

double standard_normal(CounterRng& rng) {
  // Box-Muller; one of the pair is discarded to keep draws position-independent.
  const double u1 = rng.uniform(0.0, 1.0);
  const double u2 = rng.uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

class NormalKnownVariance final : public ExpFamily {
 public:
  explicit NormalKnownVariance(double variance) : s2_(variance) {}

  std::string name() const override { return "normal"; }
  std::size_t stat_dim() const override { return 1; }
  Vec sufficient_stat(std::span<const double> z) const override { return {z[0]}; }
  double log_base(std::span<const double> z) const override {
    return -0.5 * z[0] * z[0] / s2_ - 0.5 * std::log(2.0 * std::numbers::pi * s2_);
  }
  double log_normalizer(std::span<const double> eta) const override { return 0.5 * s2_ * eta[0] * eta[0]; }
  Vec mean_map(std::span<const double> eta) const override { return {s2_ * eta[0]}; }
  Vec natural_from_mean(std::span<const double> m) const override {
    if (!std::isfinite(m[0])) throw Error(ErrorCode::DomainError, "normal mean must be finite");
    return {m[0] / s2_};
  }
  bool in_domain(std::span<const double> eta) const override { return std::isfinite(eta[0]); }
  bool has_sampler() const override { return true; }
  Vec sample(std::span<const double> eta, CounterRng& rng) const override {
    return {s2_ * eta[0] + std::sqrt(s2_) * standard_normal(rng)};
  }
  std::vector<NamedValue> descriptor() const override { return {{"variance", s2_}}; }

 private:
  double s2_;
};

class NormalUnknownVariance final : public ExpFamily {
 public:
  std::string name() const override { return "normal"; }
  std::size_t stat_dim() const override { return 2; }
  Vec sufficient_stat(std::span<const double> z) const override { return {z[0], z[0] * z[0]}; }
  double log_base(std::span<const double>) const override { return -0.5 * std::log(2.0 * std::numbers::pi); }
  double log_normalizer(std::span<const double> eta) const override {
    return -eta[0] * eta[0] / (4.0 * eta[1]) - 0.5 * std::log(-2.0 * eta[1]);
  }
  Vec mean_map(std::span<const double> eta) const override {
    const double mu = -eta[0] / (2.0 * eta[1]);
    const double var = -1.0 / (2.0 * eta[1]);
    return {mu, mu * mu + var};
  }
  Vec natural_from_mean(std::span<const double> m) const override {
    const double var = m[1] - m[0] * m[0];
    if (!(var > 0.0) || !std::isfinite(var))
      throw Error(ErrorCode::DomainError, "implied variance is not positive");
    return {m[0] / var, -0.5 / var};
  }
  bool in_domain(std::span<const double> eta) const override {
    return std::isfinite(eta[0]) && eta[1] < 0.0;
  }
  bool has_sampler() const override { return true; }
  Vec sample(std::span<const double> eta, CounterRng& rng) const override {
    const double var = -1.0 / (2.0 * eta[1]);
    return {-eta[0] / (2.0 * eta[1]) + std::sqrt(var) * standard_normal(rng)};
  }

};

class Poisson final : public ExpFamily {
 public:
  std::string name() const override { return "poisson"; }
  std::size_t stat_dim() const override { return 1; }
  Vec sufficient_stat(std::span<const double> z) const override { return {z[0]}; }
  double log_base(std::span<const double> z) const override { return -std::lgamma(z[0] + 1.0); }
  double log_normalizer(std::span<const double> eta) const override { return std::exp(eta[0]); }
  Vec mean_map(std::span<const double> eta) const override { return {std::exp(eta[0])}; }
  Vec natural_from_mean(std::span<const double> m) const override {
    if (!(m[0] > 0.0)) throw Error(ErrorCode::DomainError, "Poisson mean must be positive");
    return {std::log(m[0])};
  }
  bool in_domain(std::span<const double> eta) const override { return std::isfinite(eta[0]); }
  bool has_sampler() const override { return true; }
  Vec sample(std::span<const double> eta, CounterRng& rng) const override {
    std::poisson_distribution<long> dist(std::exp(eta[0]));
    return {static_cast<double>(dist(rng))};
  }
};

}  // namespace

Vec ExpFamily::sample(std::span<const double>, CounterRng&) const {
  throw Error(ErrorCode::InvalidArgument, "family '" + name() + "' has no sampler");
}

double ExpFamily::log_density(std::span<const double> z, std::span<const double> natural) const {
  const Vec t = sufficient_stat(z);
  return log_base(z) + dot(t, natural) - log_normalizer(natural);
}

FamilyPtr family_normal(std::optional<double> known_variance) {
  if (known_variance) {
    if (!(*known_variance > 0.0)) throw Error(ErrorCode::DomainError, "variance must be positive");
    return std::make_shared<NormalKnownVariance>(*known_variance);
  }
  return std::make_shared<NormalUnknownVariance>();
}

FamilyPtr family_poisson() { return std::make_shared<Poisson>(); }

FamilyPtr family_from_descriptor(const std::string& name, const std::vector<NamedValue>& params) {
  if (name == "normal") {
    for (const auto& p : params)
      if (p.name == "variance") return family_normal(p.value);
    return family_normal();
  }
  if (name == "poisson") return family_poisson();
  throw Error(ErrorCode::InvalidArgument, "unknown family '" + name + "'");
}

std::vector<Vec> ExpFamModel::means() const {
  std::vector<Vec> out;
  for (const auto& eta : theta2) out.push_back(family->mean_map(eta));
  return out;
}

void check_model(const ExpFamModel& model) {
  if (!model.family) throw Error(ErrorCode::InvalidArgument, "model has no family");
  const std::size_t J = model.J();
  if (J == 0 || model.theta2.size() != J || model.mech.J() != J)
    throw Error(ErrorCode::DimensionMismatch, "class dimensions disagree");
  double sum = 0.0;
  for (double p : model.theta1) {
    if (!(p >= 0.0 && p <= 1.0)) throw Error(ErrorCode::InvalidProbability, "theta1 outside [0,1]");
    sum += p;
  }
  if (std::abs(sum - 1.0) > 1e-12) throw Error(ErrorCode::InvalidProbability, "theta1 does not sum to 1");
  for (const auto& eta : model.theta2) {
    if (eta.size() != model.family->stat_dim())
      throw Error(ErrorCode::DimensionMismatch, "natural parameter has wrong dimension");
    if (!model.family->in_domain(eta))
      throw Error(ErrorCode::DomainError, "natural parameter outside the family's domain");
  }
  check_mechanism(model.mech);
}

Pattern ExpFamCase::pattern() const {
  if (z1 && z2) return Pattern::Complete;
  if (z1) return Pattern::Z1Only;
  if (z2) return Pattern::Z2Only;
  return Pattern::Neither;
}

std::size_t ExpFamDataset::count(Pattern p) const {
  return static_cast<std::size_t>(
      std::count_if(cases.begin(), cases.end(), [p](const ExpFamCase& c) { return c.pattern() == p; }));
}

std::vector<double> ExpFamDataset::class_counts(Pattern p) const {
  std::vector<double> out(J, 0.0);
  for (const auto& c : cases)
    if (c.pattern() == p) out[static_cast<std::size_t>(*c.z1)] += 1.0;
  return out;
}

std::vector<Vec> ExpFamDataset::complete_stat_sums(const ExpFamily& family) const {
  std::vector<Vec> T(J, Vec(family.stat_dim(), 0.0));
  for (const auto& c : cases) {
    if (c.pattern() != Pattern::Complete) continue;
    const Vec t = family.sufficient_stat(*c.z2);
    auto& dst = T[static_cast<std::size_t>(*c.z1)];
    for (std::size_t v = 0; v < t.size(); ++v) dst[v] += t[v];
  }
  return T;
}

void check_dataset(const ExpFamDataset& data, const ExpFamily& family) {
  if (data.J == 0) throw Error(ErrorCode::DimensionMismatch, "dataset has no classes");
  for (const auto& c : data.cases) {
    if (c.z1 && (*c.z1 < 0 || static_cast<std::size_t>(*c.z1) >= data.J))
      throw Error(ErrorCode::DimensionMismatch, "class label out of range");
    if (c.z2 && c.z2->size() != family.outcome_dim())
      throw Error(ErrorCode::DimensionMismatch, "outcome has wrong dimension");
  }
}

namespace {

// log[theta1_j (1 - phi1_j)] + t(z)' eta_j - A(eta_j); log a(z) omitted.
Vec p2_log_weights(const ExpFamModel& m, std::span<const double> t) {
  Vec lw(m.J());
  for (std::size_t j = 0; j < m.J(); ++j)
    lw[j] = safe_log(m.theta1[j]) + safe_log(1.0 - m.mech.phi1[j]) + dot(t, m.theta2[j]) -
            m.family->log_normalizer(m.theta2[j]);
  return lw;
}

double log_sum_exp(const Vec& lw) {
  const double mx = *std::max_element(lw.begin(), lw.end());
  if (mx == kNegInf) return kNegInf;
  double s = 0.0;
  for (double v : lw) s += std::exp(v - mx);
  return mx + std::log(s);
}

double degenerate_check(double ll) {
  if (std::isnan(ll) || std::isinf(ll))
    throw Error(ErrorCode::DegenerateLikelihood, "positive weight multiplies log(0)");
  return ll;
}

}  // namespace

double expfam_loglik(const ExpFamDataset& data, const ExpFamModel& model) {
  check_model(model);
  check_dataset(data, *model.family);
  const auto& fam = *model.family;
  const auto& mech = model.mech;
  const auto n0 = data.class_counts(Pattern::Complete);
  const auto n1 = data.class_counts(Pattern::Z1Only);
  const auto T0 = data.complete_stat_sums(fam);

  double ll = 0.0;
  auto add = [&ll](double weight, double log_value) {
    if (weight != 0.0) ll += weight * log_value;
  };
  // L0 and L1 through their sufficient statistics.
  for (std::size_t j = 0; j < model.J(); ++j) {
    add(n0[j], safe_log(model.theta1[j]) + safe_log(1.0 - mech.phi) + safe_log(1.0 - mech.phi0[j]) -
                   fam.log_normalizer(model.theta2[j]));
    if (n0[j] > 0.0) ll += dot(T0[j], model.theta2[j]);
    add(n1[j], safe_log(model.theta1[j]) + safe_log(1.0 - mech.phi) + safe_log(mech.phi0[j]));
  }
  // log a(z) for every observed outcome, L2 per case, L3 through n3.
  double n3 = 0.0;
  for (const auto& c : data.cases) {
    switch (c.pattern()) {
      case Pattern::Complete:
        ll += fam.log_base(*c.z2);
        break;
      case Pattern::Z2Only:
        ll += fam.log_base(*c.z2) + safe_log(mech.phi) +
              log_sum_exp(p2_log_weights(model, fam.sufficient_stat(*c.z2)));
        break;
      case Pattern::Neither:
        n3 += 1.0;
        break;
      case Pattern::Z1Only:
        break;
    }
  }
  if (n3 > 0.0) {
    double s = 0.0;
    for (std::size_t j = 0; j < model.J(); ++j) s += model.theta1[j] * mech.phi1[j];
    ll += n3 * (safe_log(mech.phi) + safe_log(s));
  }
  return degenerate_check(ll);
}

std::vector<Vec> p2_memberships(const ExpFamDataset& data, const ExpFamModel& model) {
  std::vector<Vec> out;
  for (const auto& c : data.cases) {
    if (c.pattern() != Pattern::Z2Only) continue;
    Vec lw = p2_log_weights(model, model.family->sufficient_stat(*c.z2));
    const double norm = log_sum_exp(lw);
    if (norm == kNegInf)
      throw Error(ErrorCode::DegenerateLikelihood, "a Z2-only case has zero probability under every class");
    for (double& v : lw) v = std::exp(v - norm);
    out.push_back(std::move(lw));
  }
  return out;
}

Vec p3_membership(const ExpFamModel& model) {
  Vec w(model.J());
  double s = 0.0;
  for (std::size_t j = 0; j < model.J(); ++j) s += w[j] = model.theta1[j] * model.mech.phi1[j];
  if (!(s > 0.0)) throw Error(ErrorCode::DegenerateLikelihood, "no class can produce a fully missing case");
  for (double& v : w) v /= s;
  return w;
}

namespace {

struct ClassStats {
  std::vector<double> n0, n1;
  std::vector<Vec> T0;
  double total = 0.0, n2 = 0.0, n3 = 0.0;
};

ClassStats collect(const ExpFamDataset& data, const ExpFamily& fam) {
  ClassStats s{data.class_counts(Pattern::Complete), data.class_counts(Pattern::Z1Only),
               data.complete_stat_sums(fam)};
  s.total = static_cast<double>(data.cases.size());
  s.n2 = static_cast<double>(data.count(Pattern::Z2Only));
  s.n3 = static_cast<double>(data.count(Pattern::Neither));
  return s;
}

double max_abs_diff(const Vec& a, const Vec& b) {
  double d = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (std::isnan(a[i]) && std::isnan(b[i])) continue;
    d = std::max(d, std::abs(a[i] - b[i]));
  }
  return d;
}

std::vector<double> closed_form_phi0(const ClassStats& s) {
  std::vector<double> phi0(s.n0.size(), kNaN);
  for (std::size_t j = 0; j < s.n0.size(); ++j)
    if (s.n0[j] + s.n1[j] > 0.0) phi0[j] = s.n1[j] / (s.n0[j] + s.n1[j]);
  return phi0;
}

}  // namespace

ExpFamFit expfam_reduced_fit(const ExpFamDataset& data, FamilyPtr family) {
  if (!family) throw Error(ErrorCode::InvalidArgument, "no family");
  check_dataset(data, *family);
  const auto s = collect(data, *family);
  const std::size_t J = data.J;
  double monotone = 0.0;
  for (std::size_t j = 0; j < J; ++j) monotone += s.n0[j] + s.n1[j];
  if (monotone == 0.0) throw Error(ErrorCode::UndefinedConditional, "no cases with Z1 observed");

  ExpFamFit fit;
  fit.estimator = Estimator::ReducedLikelihood;
  fit.converged = true;
  fit.model.family = family;
  fit.model.theta1.resize(J);
  fit.model.theta2.resize(J);

  // Pooled complete-case mean for classes without any Z1-observed cases.
  Vec pooled(family->stat_dim(), 0.0);
  double n0_total = 0.0;
  for (std::size_t j = 0; j < J; ++j) {
    n0_total += s.n0[j];
    for (std::size_t v = 0; v < pooled.size(); ++v) pooled[v] += s.T0[j][v];
  }

  for (std::size_t j = 0; j < J; ++j) {
    fit.model.theta1[j] = (s.n0[j] + s.n1[j]) / monotone;
    if (s.n0[j] > 0.0) {
      Vec psi = s.T0[j];
      for (double& v : psi) v /= s.n0[j];
      try {
        fit.model.theta2[j] = family->natural_from_mean(psi);
      } catch (const Error& e) {
        throw Error(ErrorCode::DomainError, "class " + std::to_string(j + 1) + ": " + e.what());
      }
    } else if (s.n1[j] > 0.0) {
      throw Error(ErrorCode::UndefinedConditional,
                  "class " + std::to_string(j + 1) + " has Z1-only cases but no complete cases");
    } else {
      if (n0_total == 0.0) throw Error(ErrorCode::UndefinedConditional, "no complete cases");
      Vec psi = pooled;
      for (double& v : psi) v /= n0_total;
      fit.model.theta2[j] = family->natural_from_mean(psi);
      fit.warnings.push_back("class " + std::to_string(j + 1) +
                             " unobserved in P0 and P1; natural parameter set from pooled P0 mean");
    }
  }
  fit.model.mech = Mechanism::unrestricted((s.n2 + s.n3) / s.total, closed_form_phi0(s),
                                           std::vector<double>(J, kNaN));
  fit.warnings.emplace_back("reduced-likelihood estimates are typically not full ML estimates; "
                            "Z2-only cases carry information about the outcome parameters");

  double ll = 0.0;
  for (const auto& c : data.cases) {
    const auto p = c.pattern();
    if (p == Pattern::Complete || p == Pattern::Z1Only) {
      const auto j = static_cast<std::size_t>(*c.z1);
      ll += std::log(fit.model.theta1[j]);
      if (p == Pattern::Complete) ll += family->log_density(*c.z2, fit.model.theta2[j]);
    }
  }
  fit.loglik = ll;
  return fit;
}

ExpFamModel expfam_default_start(const ExpFamDataset& data, FamilyPtr family) {
  ExpFamModel m = expfam_reduced_fit(data, family).model;
  const double u = 1.0 / static_cast<double>(m.J());
  if (std::any_of(m.theta1.begin(), m.theta1.end(), [](double p) { return p <= 0.0; }))
    for (double& p : m.theta1) p = (1.0 - kInteriorBlend) * p + kInteriorBlend * u;
  for (std::size_t j = 0; j < m.J(); ++j) {
    const double p0 = m.mech.phi0[j];
    m.mech.phi1[j] = std::isnan(p0) ? 0.5 : std::clamp(p0, kBoundaryNudge, 1.0 - kBoundaryNudge);
  }
  return m;
}

ExpFamFit expfam_em(const ExpFamDataset& data, const ExpFamModel& init, const EmConfig& cfg) {
  cfg.check();
  check_model(init);
  check_dataset(data, *init.family);
  if (data.J != init.J()) throw Error(ErrorCode::DimensionMismatch, "dataset and model class counts differ");
  const auto& fam = *init.family;
  const auto s = collect(data, fam);
  const std::size_t J = data.J;

  std::vector<Vec> p2_stats;
  for (const auto& c : data.cases)
    if (c.pattern() == Pattern::Z2Only) p2_stats.push_back(fam.sufficient_stat(*c.z2));

  ExpFamFit fit;
  fit.model = init;
  fit.estimator = Estimator::EM;
  if (s.n2 + s.n3 == 0.0) {
    fit.model.mech.phi1.assign(J, kNaN);
    fit.warnings.emplace_back("block monotone; phi^(1) unidentified");
  }
  double ll = expfam_loglik(data, fit.model);
  fit.trace.push_back({0, ll});
  std::vector<bool> frozen(J, false);

  int it = 0;
  while (it < cfg.max_iters) {
    ++it;
    const auto W2 = p2_memberships(data, fit.model);
    const Vec w3 = s.n3 > 0.0 ? p3_membership(fit.model) : Vec(J, 0.0);

    ExpFamModel next = fit.model;
    next.mech.phi = (s.n2 + s.n3) / s.total;
    next.mech.phi0 = closed_form_phi0(s);
    for (std::size_t j = 0; j < J; ++j) {
      double s2 = 0.0;
      Vec tsum = s.T0[j];
      for (std::size_t i = 0; i < W2.size(); ++i) {
        s2 += W2[i][j];
        for (std::size_t v = 0; v < tsum.size(); ++v) tsum[v] += W2[i][j] * p2_stats[i][v];
      }
      const double s3 = s.n3 * w3[j];
      next.theta1[j] = (s.n0[j] + s.n1[j] + s2 + s3) / s.total;

      const double denom = s.n0[j] + s2;
      if (denom < kEmptyClass) {
        if (!frozen[j]) {
          frozen[j] = true;
          fit.warnings.push_back("class " + std::to_string(j + 1) +
                                 " has no effective outcome data; natural parameter frozen");
        }
      } else {
        for (double& v : tsum) v /= denom;
        try {
          next.theta2[j] = fam.natural_from_mean(tsum);
        } catch (const Error& e) {
          throw Error(ErrorCode::DomainError, "M step, class " + std::to_string(j + 1) + ": " + e.what());
        }
      }
      if (s2 + s3 > 0.0) next.mech.phi1[j] = s3 / (s2 + s3);
    }
    // Keep the simplex exact against accumulated rounding.
    double tot = 0.0;
    for (double p : next.theta1) tot += p;
    for (double& p : next.theta1) p /= tot;

    const double ll_next = expfam_loglik(data, next);
    double dparam = std::max(max_abs_diff(next.theta1, fit.model.theta1),
                             max_abs_diff(next.mech.phi1, fit.model.mech.phi1));
    for (std::size_t j = 0; j < J; ++j)
      dparam = std::max(dparam, max_abs_diff(next.theta2[j], fit.model.theta2[j]));
    const double gain = ll_next - ll;
    fit.model = std::move(next);
    ll = ll_next;
    fit.trace.push_back({it, ll});
    if (dparam < cfg.tol_param && gain < cfg.tol_loglik) {
      fit.converged = true;
      break;
    }
  }
  fit.iterations = it;
  fit.loglik = ll;
  if (!fit.converged)
    fit.warnings.push_back("EM stopped at max_iters=" + std::to_string(cfg.max_iters) + " before convergence");
  return fit;
}

}  // namespace bcmar
