#include "bcmar/em.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "bcmar/factored.hpp"
#include "bcmar/rng.hpp"
#include "detail.hpp"

namespace bcmar {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();
constexpr double kBoundaryNudge = 1e-8;
constexpr double kInteriorBlend = 1e-2;
constexpr double kMultistartTol = 1e-4;

double clamp_open(double x) {
  if (std::isnan(x)) return 0.5;
  return std::clamp(x, kBoundaryNudge, 1.0 - kBoundaryNudge);
}

double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
  double d = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (std::isnan(a[i]) && std::isnan(b[i])) continue;
    d = std::max(d, std::abs(a[i] - b[i]));
  }
  return d;
}

}  // namespace

void EmConfig::check() const {
  if (max_iters < 1) throw Error(ErrorCode::InvalidArgument, "max_iters must be >= 1");
  if (!(tol_param > 0.0) || !(tol_loglik > 0.0))
    throw Error(ErrorCode::InvalidArgument, "tolerances must be positive");
  if (starts < 1) throw Error(ErrorCode::InvalidArgument, "starts must be >= 1");
}

Allocation e_step(const MarginTable& t, const CellProbs& theta, std::span<const double> p2_weight,
                  std::span<const double> p3_weight) {
  const std::size_t J = t.J, K = t.K;
  Allocation a{std::vector<double>(J * K, 0.0), std::vector<double>(J * K, 0.0),
               std::vector<double>(J * K, 0.0)};

  for (std::size_t j = 0; j < J; ++j) {
    const auto count = static_cast<double>(t.z1_only[j]);
    if (count == 0.0) continue;
    const double row = theta.row_sum(j);
    for (std::size_t k = 0; k < K; ++k)
      a.n1[j * K + k] = row > 0.0 ? count * theta(j, k) / row : count / static_cast<double>(K);
  }

  for (std::size_t k = 0; k < K; ++k) {
    const auto count = static_cast<double>(t.z2_only[k]);
    if (count == 0.0) continue;
    double denom = 0.0;
    for (std::size_t j = 0; j < J; ++j) denom += p2_weight[j] * theta(j, k);
    for (std::size_t j = 0; j < J; ++j)
      a.n2[j * K + k] = denom > 0.0 ? count * p2_weight[j] * theta(j, k) / denom
                                    : count / static_cast<double>(J);
  }

  if (t.neither > 0) {
    const auto count = static_cast<double>(t.neither);
    double denom = 0.0;
    for (std::size_t j = 0; j < J; ++j) denom += p3_weight[j] * theta.row_sum(j);
    for (std::size_t j = 0; j < J; ++j)
      for (std::size_t k = 0; k < K; ++k)
        a.n3[j * K + k] = denom > 0.0 ? count * p3_weight[j] * theta(j, k) / denom
                                      : count / static_cast<double>(J * K);
  }
  return a;
}

CellProbs m_step_theta(const MarginTable& t, const Allocation& a) {
  const auto n = static_cast<double>(t.total());
  CellProbs theta(t.J, t.K);
  for (std::size_t i = 0; i < theta.p.size(); ++i)
    theta.p[i] = (static_cast<double>(t.complete[i]) + a.n1[i] + a.n2[i] + a.n3[i]) / n;
  return theta;
}

EmIterate em_start(const MarginTable& t, Model model, int start_index, std::uint64_t seed) {
  validate(t);
  CellProbs theta;
  try {
    theta = closed_form_theta(t);
  } catch (const Error&) {
    theta = CellProbs::uniform(t.J, t.K);
  }
  // Cells at zero would stay there forever under EM; start just inside the simplex.
  if (std::any_of(theta.p.begin(), theta.p.end(), [](double v) { return v <= 0.0; })) {
    const double u = 1.0 / static_cast<double>(theta.p.size());
    for (double& v : theta.p) v = (1.0 - kInteriorBlend) * v + kInteriorBlend * u;
  }

  const auto cf = closed_form_mechanism(t);
  CounterRng rng(seed, static_cast<std::uint64_t>(start_index));
  // Later starts draw theta uniformly from the simplex (Dirichlet(1)).
  if (start_index > 0) {
    double total = 0.0;
    for (double& v : theta.p) total += v = -std::log(rng.uniform(0.0, 1.0));
    for (double& v : theta.p) v /= total;
  }
  std::vector<double> second(t.J);
  for (std::size_t j = 0; j < t.J; ++j)
    second[j] = start_index == 0 ? clamp_open(cf.phi0[j]) : rng.uniform(0.05, 0.95);

  EmIterate it{theta, {}};
  switch (model) {
    case Model::UnrestrictedBCMAR:
      it.mech = Mechanism::unrestricted(cf.phi, cf.phi0, second);
      break;
    case Model::RestrictedBCMAR:
      it.mech = Mechanism::restricted(cf.phi, second);
      break;
    case Model::RestrictedMAR: {
      const Count n23 = t.n2() + t.n3();
      const double phi1 = n23 > 0 ? static_cast<double>(t.n3()) / static_cast<double>(n23) : kNaN;
      it.mech = Mechanism::restricted_mar(cf.phi, cf.phi0, phi1);
      break;
    }
    case Model::Reduced:
      throw Error(ErrorCode::InvalidArgument, "the reduced fit is not iterative");
  }

  if (!std::isfinite(detail::loglik_unchecked(t, it.theta, it.mech))) {
    it.theta = CellProbs::uniform(t.J, t.K);
    if (!std::isfinite(detail::loglik_unchecked(t, it.theta, it.mech)))
      throw Error(ErrorCode::DegenerateLikelihood, "starting point has zero likelihood");
  }
  return it;
}

EmIterate em_update(const MarginTable& t, const EmIterate& cur) {
  const std::size_t J = t.J, K = t.K;
  const Model model = cur.mech.variant;
  std::vector<double> w2(J, 1.0), w3(J, 1.0);
  if (model != Model::RestrictedMAR) {
    for (std::size_t j = 0; j < J; ++j) {
      w2[j] = 1.0 - cur.mech.phi1[j];
      w3[j] = cur.mech.phi1[j];
    }
  }
  const Allocation a = e_step(t, cur.theta, w2, w3);
  EmIterate next{m_step_theta(t, a), cur.mech};

  if (model == Model::RestrictedMAR) return next;

  for (std::size_t j = 0; j < J; ++j) {
    double s1 = 0.0, s2 = 0.0, s3 = 0.0;
    for (std::size_t k = 0; k < K; ++k) {
      s1 += a.n1[j * K + k];
      s2 += a.n2[j * K + k];
      s3 += a.n3[j * K + k];
    }
    if (model == Model::UnrestrictedBCMAR) {
      if (s2 + s3 > 0.0) next.mech.phi1[j] = s3 / (s2 + s3);
    } else {
      const double denom = static_cast<double>(t.complete_row(j)) + s1 + s2 + s3;
      if (denom > 0.0) next.mech.phi0[j] = next.mech.phi1[j] = (s1 + s3) / denom;
    }
  }
  return next;
}

namespace {

FitReport run_single(const MarginTable& t, Model model, const EmConfig& cfg, int start_index) {
  EmIterate cur = em_start(t, model, start_index, cfg.seed);
  double ll = detail::loglik_unchecked(t, cur.theta, cur.mech);

  FitReport rep;
  rep.model = model;
  rep.estimator = Estimator::EM;
  rep.converged = false;
  rep.trace.push_back({0, ll});

  int it = 0;
  while (it < cfg.max_iters) {
    ++it;
    EmIterate next = em_update(t, cur);
    const double ll_next = detail::loglik_unchecked(t, next.theta, next.mech);
    const double dparam = std::max({max_abs_diff(next.theta.p, cur.theta.p),
                                    max_abs_diff(next.mech.phi1, cur.mech.phi1),
                                    max_abs_diff(next.mech.phi0, cur.mech.phi0)});
    const double gain = ll_next - ll;
    cur = std::move(next);
    ll = ll_next;
    rep.trace.push_back({it, ll});
    if (dparam < cfg.tol_param && gain < cfg.tol_loglik) {
      rep.converged = true;
      break;
    }
  }
  rep.iterations = it;
  rep.theta = std::move(cur.theta);
  rep.mechanism = std::move(cur.mech);
  rep.loglik = ll;
  if (!rep.converged)
    rep.warnings.push_back("EM stopped at max_iters=" + std::to_string(cfg.max_iters) +
                           " before convergence");
  return rep;
}

FitReport run_em(const MarginTable& t, Model model, const EmConfig& cfg) {
  cfg.check();
  auto notes = validate(t);
  std::vector<FitReport> runs;
  runs.reserve(static_cast<std::size_t>(cfg.starts));
  for (int s = 0; s < cfg.starts; ++s) runs.push_back(run_single(t, model, cfg, s));

  std::size_t best = 0;
  for (std::size_t i = 1; i < runs.size(); ++i)
    if (runs[i].loglik > runs[best].loglik) best = i;

  bool disagree = false;
  for (const auto& r : runs)
    if (max_abs_diff(r.theta.p, runs[best].theta.p) > kMultistartTol) disagree = true;

  FitReport rep = std::move(runs[best]);
  rep.warnings.insert(rep.warnings.begin(), notes.begin(), notes.end());
  if (disagree) rep.warnings.emplace_back("multiple local maxima / ridge");
  return rep;
}

}  // namespace

FitReport em_unrestricted(const MarginTable& table, const EmConfig& cfg) {
  return run_em(table, Model::UnrestrictedBCMAR, cfg);
}

FitReport em_restricted(const MarginTable& table, const EmConfig& cfg) {
  return run_em(table, Model::RestrictedBCMAR, cfg);
}

FitReport em_restricted_mar(const MarginTable& table, const EmConfig& cfg) {
  return run_em(table, Model::RestrictedMAR, cfg);
}

FitReport reduced_fit(const MarginTable& table) {
  FitReport rep;
  rep.model = Model::Reduced;
  rep.estimator = Estimator::ReducedLikelihood;
  rep.warnings = validate(table);
  rep.theta = closed_form_theta(table);
  rep.loglik = loglik_reduced(table, rep.theta);
  rep.iterations = 0;
  rep.converged = true;
  return rep;
}

FitReport fit(const MarginTable& table, Model model, const EmConfig& cfg) {
  switch (model) {
    case Model::UnrestrictedBCMAR: {
      FitReport cf;
      try {
        cf = fit_unrestricted_closed_form(table);
      } catch (const Error& e) {
        if (e.code() != ErrorCode::UndefinedConditional) throw;
        FitReport em = em_unrestricted(table, cfg);
        em.warnings.push_back(std::string("closed form undefined: ") + e.what());
        return em;
      }
      if (cf.full_ml) return cf;
      FitReport em = em_unrestricted(table, cfg);
      em.feasibility = cf.feasibility;
      em.phi1_unconstrained = cf.phi1_unconstrained;
      em.solution_dim = cf.solution_dim;
      return em;
    }
    case Model::RestrictedBCMAR: return em_restricted(table, cfg);
    case Model::RestrictedMAR: return em_restricted_mar(table, cfg);
    case Model::Reduced: return reduced_fit(table);
  }
  throw Error(ErrorCode::InvalidArgument, "unknown model");
}

}  // namespace bcmar
