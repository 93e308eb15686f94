#include "bcmar/inference.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <boost/math/special_functions/gamma.hpp>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>
#include <thread>

#include "bcmar/factored.hpp"
#include "bcmar/rng.hpp"
#include "detail.hpp"

namespace bcmar {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();
constexpr double kNegativeStatTol = 1e-6;
constexpr double kMaxFailureShare = 0.05;

std::string idx(std::size_t j) { return "[" + std::to_string(j + 1) + "]"; }

bool nested(Model full, Model restricted) {
  return full == Model::UnrestrictedBCMAR &&
         (restricted == Model::RestrictedBCMAR || restricted == Model::RestrictedMAR);
}

}  // namespace

double chi_square_upper_tail(double x, int df) {
  if (df < 1) throw Error(ErrorCode::InvalidArgument, "chi-square df must be >= 1");
  if (!(x > 0.0)) return 1.0;
  return boost::math::gamma_q(0.5 * df, 0.5 * x);
}

LrtResult lrt(const FitReport& full, const FitReport& restricted) {
  if (!nested(full.model, restricted.model))
    throw Error(ErrorCode::NonNested, to_string(restricted.model) + " is not a submodel of " +
                                          to_string(full.model));
  if (full.theta.J != restricted.theta.J || full.theta.K != restricted.theta.K)
    throw Error(ErrorCode::DimensionMismatch, "fits are on tables of different shape");
  for (const FitReport* r : {&full, &restricted}) {
    if (!r->converged || !r->full_ml || !std::isfinite(r->loglik))
      throw Error(ErrorCode::FailedFit, to_string(r->model) + " fit is not a converged ML fit");
  }
  LrtResult res;
  res.full = full.model;
  res.restricted = restricted.model;
  res.loglik_full = full.loglik;
  res.loglik_restricted = restricted.loglik;
  res.df = parameter_count(full.model, full.theta.J, full.theta.K) -
           parameter_count(restricted.model, full.theta.J, full.theta.K);
  const double stat = -2.0 * (restricted.loglik - full.loglik);
  if (stat < -kNegativeStatTol) {
    std::ostringstream os;
    os << "negative LRT statistic " << stat << "; the full fit did not reach its maximum";
    throw Error(ErrorCode::FailedFit, os.str());
  }
  res.stat = std::max(0.0, stat);
  res.p_value = chi_square_upper_tail(res.stat, res.df);
  return res;
}

std::vector<NamedValue> flatten_parameters(const FitReport& rep) {
  std::vector<NamedValue> out;
  const auto& th = rep.theta;
  for (std::size_t j = 0; j < th.J; ++j)
    for (std::size_t k = 0; k < th.K; ++k)
      out.push_back({"theta[" + std::to_string(j + 1) + "," + std::to_string(k + 1) + "]", th(j, k)});
  if (!rep.mechanism) return out;
  const Mechanism& m = *rep.mechanism;
  out.push_back({"phi", m.phi});
  switch (m.variant) {
    case Model::UnrestrictedBCMAR:
      for (std::size_t j = 0; j < m.J(); ++j) out.push_back({"phi0" + idx(j), m.phi0[j]});
      for (std::size_t j = 0; j < m.J(); ++j) out.push_back({"phi1" + idx(j), m.phi1[j]});
      break;
    case Model::RestrictedBCMAR:
      for (std::size_t j = 0; j < m.J(); ++j) out.push_back({"phi_j" + idx(j), m.phi0[j]});
      break;
    case Model::RestrictedMAR:
      for (std::size_t j = 0; j < m.J(); ++j) out.push_back({"phi0" + idx(j), m.phi0[j]});
      out.push_back({"phi1", m.phi1_common()});
      break;
    case Model::Reduced:
      break;
  }
  return out;
}

MarginTable resample_table(const MarginTable& table, std::uint64_t seed, std::uint64_t replicate) {
  validate(table);
  std::vector<Count> weights;
  weights.reserve(table.observed_cell_count());
  weights.insert(weights.end(), table.complete.begin(), table.complete.end());
  weights.insert(weights.end(), table.z1_only.begin(), table.z1_only.end());
  weights.insert(weights.end(), table.z2_only.begin(), table.z2_only.end());
  weights.push_back(table.neither);
  std::vector<Count> cum(weights.size());
  std::partial_sum(weights.begin(), weights.end(), cum.begin());

  const auto n = static_cast<std::uint64_t>(cum.back());
  std::vector<Count> draws(weights.size(), 0);
  CounterRng rng(seed, replicate);
  for (std::uint64_t i = 0; i < n; ++i) {
    const auto u = static_cast<Count>(rng.below(n));
    const auto cell = std::upper_bound(cum.begin(), cum.end(), u) - cum.begin();
    ++draws[static_cast<std::size_t>(cell)];
  }

  MarginTable out(table.J, table.K);
  std::size_t pos = 0;
  for (auto& c : out.complete) c = draws[pos++];
  for (auto& c : out.z1_only) c = draws[pos++];
  for (auto& c : out.z2_only) c = draws[pos++];
  out.neither = draws[pos];
  return out;
}

namespace {

struct ReplicateOutcome {
  bool failed = false;
  bool used_em = false;
  bool multiple = false;
  bool unconverged = false;
  std::vector<double> values;
};

ReplicateOutcome run_replicate(const MarginTable& table, const BootstrapConfig& cfg, std::size_t r) {
  ReplicateOutcome out;
  try {
    const MarginTable sample = resample_table(table, cfg.seed, r);
    FitReport rep;
    if (cfg.model == Model::UnrestrictedBCMAR) {
      bool closed_ok = false;
      try {
        rep = fit_unrestricted_closed_form(sample);
        closed_ok = rep.full_ml;
      } catch (const Error& e) {
        if (e.code() != ErrorCode::UndefinedConditional) throw;
      }
      if (!closed_ok) {
        rep = em_unrestricted(sample, cfg.em);
        out.used_em = true;
      }
      out.multiple = rep.feasibility == Feasibility::MultipleFeasible;
    } else {
      rep = fit(sample, cfg.model, cfg.em);
    }
    out.unconverged = !rep.converged;
    for (const auto& nv : flatten_parameters(rep)) out.values.push_back(nv.value);
  } catch (const Error&) {
    out.failed = true;
  }
  return out;
}

}  // namespace

BootstrapResult bootstrap_se(const MarginTable& table, const BootstrapConfig& cfg) {
  if (cfg.replicates < 2) throw Error(ErrorCode::InvalidArgument, "bootstrap needs at least 2 replicates");
  validate(table);
  cfg.em.check();

  BootstrapResult res;
  res.model = cfg.model;
  res.replicates = cfg.replicates;
  res.seed = cfg.seed;
  res.estimate = flatten_parameters(fit(table, cfg.model, cfg.em));

  const auto B = static_cast<std::size_t>(cfg.replicates);
  std::vector<ReplicateOutcome> outcomes(B);
  const auto workers = static_cast<std::size_t>(std::clamp(cfg.threads, 1, cfg.replicates));
  if (workers == 1) {
    for (std::size_t r = 0; r < B; ++r) outcomes[r] = run_replicate(table, cfg, r);
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t w = 0; w < workers; ++w) {
      pool.emplace_back([&, w] {
        for (std::size_t r = w; r < B; r += workers) outcomes[r] = run_replicate(table, cfg, r);
      });
    }
  }

  const std::size_t P = res.estimate.size();
  std::vector<double> sum(P, 0.0), sumsq(P, 0.0);
  std::vector<int> count(P, 0);
  int used_em = 0, multiple = 0, unconverged = 0, ok = 0;
  // Two-pass (mean then squared deviations) in replicate order for determinism.
  for (const auto& o : outcomes) {
    if (o.failed) {
      ++res.failures;
      continue;
    }
    ++ok;
    used_em += o.used_em;
    multiple += o.multiple;
    unconverged += o.unconverged;
    for (std::size_t p = 0; p < P; ++p) {
      if (std::isnan(o.values[p])) continue;
      sum[p] += o.values[p];
      ++count[p];
    }
  }
  for (const auto& o : outcomes) {
    if (o.failed) continue;
    for (std::size_t p = 0; p < P; ++p) {
      if (std::isnan(o.values[p])) continue;
      const double d = o.values[p] - sum[p] / count[p];
      sumsq[p] += d * d;
    }
  }

  if (res.failures > kMaxFailureShare * cfg.replicates)
    throw Error(ErrorCode::FailedFit, std::to_string(res.failures) + " of " +
                                          std::to_string(cfg.replicates) + " bootstrap replicates failed");

  res.contributing = count;
  for (std::size_t p = 0; p < P; ++p) {
    const double se = count[p] >= 2 ? std::sqrt(sumsq[p] / (count[p] - 1)) : kNaN;
    res.se.push_back({res.estimate[p].name, se});
  }
  res.infeasible_fraction = ok > 0 ? static_cast<double>(used_em) / ok : 0.0;
  if (multiple > 0)
    res.warnings.push_back(std::to_string(multiple) +
                           " replicates had a phi^(1) solution set of positive dimension; the "
                           "canonical point was used and its spread mixes in canonicalization");
  if (unconverged > 0)
    res.warnings.push_back(std::to_string(unconverged) + " replicates stopped at max_iters");
  if (res.failures > 0)
    res.warnings.push_back(std::to_string(res.failures) + " replicates failed and were dropped");
  return res;
}

std::vector<double> reduced_loglik_hessian(const MarginTable& table, const CellProbs& theta_hat,
                                           std::size_t reference) {
  const std::size_t cells = theta_hat.p.size();
  const std::size_t P = cells - 1;
  std::vector<std::size_t> free_idx;
  for (std::size_t i = 0; i < cells; ++i)
    if (i != reference) free_idx.push_back(i);

  std::vector<double> base(P);
  for (std::size_t a = 0; a < P; ++a) base[a] = theta_hat.p[free_idx[a]];

  auto f = [&](const std::vector<double>& x) {
    CellProbs th(theta_hat.J, theta_hat.K);
    double rest = 1.0;
    for (std::size_t a = 0; a < P; ++a) {
      th.p[free_idx[a]] = x[a];
      rest -= x[a];
    }
    th.p[reference] = rest;
    return detail::loglik_reduced_unchecked(table, th);
  };

  const double h0 = std::cbrt(std::numeric_limits<double>::epsilon());
  std::vector<double> step(P);
  for (std::size_t a = 0; a < P; ++a) step[a] = h0 * (1.0 + std::abs(base[a]));

  const double f0 = f(base);
  std::vector<double> H(P * P, 0.0);
  for (std::size_t a = 0; a < P; ++a) {
    auto xp = base, xm = base;
    xp[a] += step[a];
    xm[a] -= step[a];
    H[a * P + a] = (f(xp) - 2.0 * f0 + f(xm)) / (step[a] * step[a]);
    for (std::size_t b = a + 1; b < P; ++b) {
      auto pp = base, pm = base, mp = base, mm = base;
      pp[a] += step[a], pp[b] += step[b];
      pm[a] += step[a], pm[b] -= step[b];
      mp[a] -= step[a], mp[b] += step[b];
      mm[a] -= step[a], mm[b] -= step[b];
      H[a * P + b] = H[b * P + a] = (f(pp) - f(pm) - f(mp) + f(mm)) / (4.0 * step[a] * step[b]);
    }
  }
  return H;
}

std::vector<double> reduced_information_se(const MarginTable& table, const CellProbs& theta_hat) {
  validate(table);
  if (theta_hat.J != table.J || theta_hat.K != table.K)
    throw Error(ErrorCode::DimensionMismatch, "theta dimensions differ from the table");
  check_probabilities(theta_hat);
  for (std::size_t j = 0; j < table.J; ++j)
    for (std::size_t k = 0; k < table.K; ++k)
      if (table.cell(j, k) > 0 && !(theta_hat(j, k) > 0.0))
        throw Error(ErrorCode::DomainError, "theta_hat is zero in a cell with positive count");

  const std::size_t cells = theta_hat.p.size();
  if (cells == 1) return {0.0};
  const auto reference = static_cast<std::size_t>(
      std::max_element(theta_hat.p.begin(), theta_hat.p.end()) - theta_hat.p.begin());
  const std::size_t P = cells - 1;
  const auto H = reduced_loglik_hessian(table, theta_hat, reference);

  Eigen::MatrixXd info(static_cast<Eigen::Index>(P), static_cast<Eigen::Index>(P));
  for (std::size_t a = 0; a < P; ++a)
    for (std::size_t b = 0; b < P; ++b) info(a, b) = -H[a * P + b];

  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(info);
  const Eigen::VectorXd ev = eig.eigenvalues();
  if (!(ev.minCoeff() > 1e-10 * std::max(1.0, ev.maxCoeff()))) {
    std::ostringstream os;
    os << "observed information is singular; null direction (free cells, reference cell "
       << reference + 1 << " dropped): " << eig.eigenvectors().col(0).transpose();
    throw Error(ErrorCode::SingularInformation, os.str());
  }
  const Eigen::MatrixXd cov = eig.eigenvectors() * ev.cwiseInverse().asDiagonal() *
                              eig.eigenvectors().transpose();

  std::vector<double> se(cells, 0.0);
  std::size_t a = 0;
  for (std::size_t i = 0; i < cells; ++i) {
    if (i == reference) continue;
    se[i] = std::sqrt(cov(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(a)));
    ++a;
  }
  se[reference] = std::sqrt(cov.sum());
  return se;
}

}  // namespace bcmar
