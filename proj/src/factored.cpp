#include "bcmar/factored.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>

#include "detail.hpp"

namespace bcmar {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

double ratio(Count num, Count den) { return static_cast<double>(num) / static_cast<double>(den); }

}  // namespace

PatternMixtureParams pattern_mixture_mle(const MarginTable& table) {
  validate(table);
  PatternMixtureParams pm;
  pm.J = table.J;
  pm.K = table.K;
  const Count n0 = table.n0(), n1 = table.n1(), n2 = table.n2(), n = table.total();
  if (n0 > 0) {
    std::vector<double> a(table.complete.size());
    for (std::size_t i = 0; i < a.size(); ++i) a[i] = ratio(table.complete[i], n0);
    pm.alpha0 = std::move(a);
  }
  if (n1 > 0) {
    std::vector<double> b(table.J);
    for (std::size_t j = 0; j < table.J; ++j) b[j] = ratio(table.z1_only[j], n1);
    pm.beta1 = std::move(b);
  }
  if (n2 > 0) {
    std::vector<double> g(table.K);
    for (std::size_t k = 0; k < table.K; ++k) g[k] = ratio(table.z2_only[k], n2);
    pm.gamma2 = std::move(g);
  }
  pm.pi = {ratio(n0, n), ratio(n1, n), ratio(n2, n), ratio(table.n3(), n)};
  return pm;
}

SelectionParams selection_from_pattern_mixture(const PatternMixtureParams& pm) {
  const std::size_t J = pm.J, K = pm.K;
  const double pi0 = pm.pi.at(0), pi1 = pm.pi.at(1), pi2 = pm.pi.at(2);
  SelectionParams out{CellProbs(J, K), 1.0 - pi0 - pi1, std::vector<double>(J, kNaN), {}};
  if (pi0 + pi1 <= 0.0) throw Error(ErrorCode::UndefinedConditional, "no cases with Z1 observed");

  for (std::size_t j = 0; j < J; ++j) {
    double alpha_row = 0.0;
    if (pm.alpha0)
      for (std::size_t k = 0; k < K; ++k) alpha_row += (*pm.alpha0)[j * K + k];
    const double beta = pm.beta1 ? (*pm.beta1)[j] : 0.0;
    const double z1_mass = pi0 * alpha_row + pi1 * beta;
    if (alpha_row > 0.0) {
      for (std::size_t k = 0; k < K; ++k)
        out.theta(j, k) = ((*pm.alpha0)[j * K + k] / alpha_row) * (z1_mass / (pi0 + pi1));
    } else if (beta > 0.0) {
      throw Error(ErrorCode::UndefinedConditional,
                  "row " + std::to_string(j + 1) + " has Z1-only cases but no complete cases");
    }
    if (z1_mass > 0.0) out.phi0[j] = pi1 * beta / z1_mass;
  }
  if (pm.gamma2 && out.phi > 0.0) {
    out.phi1_rhs.resize(K);
    for (std::size_t k = 0; k < K; ++k) out.phi1_rhs[k] = pi2 / out.phi * (*pm.gamma2)[k];
  }
  return out;
}

CellProbs closed_form_theta(const MarginTable& table) {
  validate(table);
  const Count monotone = table.n0() + table.n1();
  if (monotone == 0) throw Error(ErrorCode::UndefinedConditional, "no cases with Z1 observed");
  CellProbs theta(table.J, table.K);
  for (std::size_t j = 0; j < table.J; ++j) {
    const Count row = table.complete_row(j);
    if (row == 0) {
      if (table.z1_only[j] > 0)
        throw Error(ErrorCode::UndefinedConditional,
                    "row " + std::to_string(j + 1) + " has Z1-only cases but no complete cases");
      continue;
    }
    const double marginal = ratio(row + table.z1_only[j], monotone);
    for (std::size_t k = 0; k < table.K; ++k) theta(j, k) = ratio(table.cell(j, k), row) * marginal;
  }
  return theta;
}

ClosedFormMechanism closed_form_mechanism(const MarginTable& table) {
  validate(table);
  ClosedFormMechanism m;
  m.phi = ratio(table.n2() + table.n3(), table.total());
  m.phi0.assign(table.J, kNaN);
  for (std::size_t j = 0; j < table.J; ++j) {
    const Count denom = table.complete_row(j) + table.z1_only[j];
    if (denom > 0) m.phi0[j] = ratio(table.z1_only[j], denom);
  }
  return m;
}

namespace feasibility {

std::optional<std::vector<double>> phase_one(const std::vector<double>& A, std::size_t m,
                                             std::size_t n, const std::vector<double>& b,
                                             double lo, double hi, double tol) {
  // Shift x = lo + y, y in [0, u]. Rows: m equality rows (artificial basis),
  // n box rows y_i + s_i = u (slack basis). Columns: y | s | artificials | rhs.
  const double u = hi - lo;
  const std::size_t rows = m + n;
  const std::size_t cols = 2 * n + m;
  Eigen::MatrixXd T = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols + 1));
  std::vector<std::size_t> basis(rows);

  for (std::size_t r = 0; r < m; ++r) {
    double rhs = b[r];
    for (std::size_t c = 0; c < n; ++c) rhs -= A[r * n + c] * lo;
    const double sign = rhs < 0.0 ? -1.0 : 1.0;
    for (std::size_t c = 0; c < n; ++c) T(r, c) = sign * A[r * n + c];
    T(r, 2 * n + r) = 1.0;
    T(r, cols) = sign * rhs;
    basis[r] = 2 * n + r;
  }
  for (std::size_t i = 0; i < n; ++i) {
    const auto r = m + i;
    T(r, i) = 1.0;
    T(r, n + i) = 1.0;
    T(r, cols) = u;
    basis[r] = n + i;
  }

  auto reduced_cost = [&](std::size_t c) {
    if (c >= 2 * n) return 0.0;
    double rc = 0.0;
    for (std::size_t r = 0; r < rows; ++r)
      if (basis[r] >= 2 * n) rc -= T(r, c);
    return rc;
  };

  constexpr double eps = 1e-12;
  for (int iter = 0; iter < 10000; ++iter) {
    // Bland's rule: first improving column, ties in the ratio test by basis index.
    std::size_t enter = cols;
    for (std::size_t c = 0; c < cols; ++c) {
      if (reduced_cost(c) < -eps) {
        enter = c;
        break;
      }
    }
    if (enter == cols) break;
    std::size_t leave = rows;
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t r = 0; r < rows; ++r) {
      const double a = T(r, enter);
      if (a > eps) {
        const double q = T(r, cols) / a;
        if (q < best - eps || (q <= best + eps && leave < rows && basis[r] < basis[leave])) {
          best = q;
          leave = r;
        }
      }
    }
    if (leave == rows) break;  // unbounded cannot happen for a phase-one objective
    T.row(leave) /= T(leave, enter);
    for (std::size_t r = 0; r < rows; ++r) {
      if (r != leave && T(r, enter) != 0.0) T.row(r) -= T(r, enter) * T.row(leave);
    }
    basis[leave] = enter;
  }

  double infeasibility = 0.0;
  std::vector<double> y(n, 0.0);
  for (std::size_t r = 0; r < rows; ++r) {
    if (basis[r] >= 2 * n) infeasibility += T(r, cols);
    else if (basis[r] < n) y[basis[r]] = T(r, cols);
  }
  if (infeasibility > tol) return std::nullopt;
  for (double& v : y) v = std::clamp(lo + v, lo, hi);
  return y;
}

std::vector<double> project_affine_box(const std::vector<double>& A, std::size_t m, std::size_t n,
                                       const std::vector<double>& b, double lo, double hi,
                                       std::vector<double> target) {
  Eigen::MatrixXd Am(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(n));
  for (std::size_t r = 0; r < m; ++r)
    for (std::size_t c = 0; c < n; ++c) Am(r, c) = A[r * n + c];
  Eigen::VectorXd bv = Eigen::Map<const Eigen::VectorXd>(b.data(), static_cast<Eigen::Index>(m));
  Eigen::CompleteOrthogonalDecomposition<Eigen::MatrixXd> cod(Am.rows(), Am.cols());
  cod.setThreshold(kPivotTol);
  cod.compute(Am);
  const Eigen::MatrixXd pinv = cod.pseudoInverse();

  Eigen::VectorXd x = Eigen::Map<Eigen::VectorXd>(target.data(), static_cast<Eigen::Index>(n));
  Eigen::VectorXd p = Eigen::VectorXd::Zero(x.size());
  Eigen::VectorXd q = Eigen::VectorXd::Zero(x.size());
  for (int iter = 0; iter < 200000; ++iter) {
    Eigen::VectorXd z = x + p;
    Eigen::VectorXd y = z - pinv * (Am * z - bv);
    p = z - y;
    Eigen::VectorXd w = y + q;
    Eigen::VectorXd next = w.cwiseMax(lo).cwiseMin(hi);
    q = w - next;
    const double change = (next - x).cwiseAbs().maxCoeff();
    x = next;
    if (change < 1e-15 && (Am * x - bv).cwiseAbs().maxCoeff() < 1e-13) break;
  }
  return {x.data(), x.data() + x.size()};
}

}  // namespace feasibility

FeasibilityResult solve_phi1(const CellProbs& theta_hat, const MarginTable& table) {
  validate(table);
  if (theta_hat.J != table.J || theta_hat.K != table.K)
    throw Error(ErrorCode::DimensionMismatch, "theta dimensions differ from the table");
  check_probabilities(theta_hat);

  const std::size_t J = table.J, K = table.K;
  FeasibilityResult res;
  const Count n23 = table.n2() + table.n3();
  if (n23 == 0) {
    res.status = Feasibility::Unidentified;
    res.solution_dim = static_cast<int>(J);
    return res;
  }
  if (J < K) {
    res.status = Feasibility::NotApplicable;
    return res;
  }

  // Unknowns x_j = 1 - phi1_j; row k: sum_j theta_jk x_j = n_(2),+k / (n2 + n3).
  std::vector<double> A(K * J), b(K);
  Eigen::MatrixXd Am(static_cast<Eigen::Index>(K), static_cast<Eigen::Index>(J));
  for (std::size_t k = 0; k < K; ++k) {
    b[k] = ratio(table.z2_only[k], n23);
    for (std::size_t j = 0; j < J; ++j) A[k * J + j] = Am(k, j) = theta_hat(j, k);
  }
  Eigen::VectorXd bv = Eigen::Map<Eigen::VectorXd>(b.data(), static_cast<Eigen::Index>(K));

  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(Am);
  qr.setThreshold(feasibility::kPivotTol);
  res.rank = static_cast<int>(qr.rank());
  res.solution_dim = static_cast<int>(J) - res.rank;

  Eigen::CompleteOrthogonalDecomposition<Eigen::MatrixXd> cod(Am.rows(), Am.cols());
  cod.setThreshold(feasibility::kPivotTol);
  cod.compute(Am);
  const Eigen::VectorXd x_ls = cod.solve(bv);
  const double bnorm = bv.norm();
  res.relative_residual = (Am * x_ls - bv).norm() / (bnorm > 0.0 ? bnorm : 1.0);

  std::vector<double> unconstrained(J);
  for (std::size_t j = 0; j < J; ++j) unconstrained[j] = 1.0 - x_ls(static_cast<Eigen::Index>(j));
  res.phi1_unconstrained = unconstrained;

  auto to_phi1 = [](std::vector<double> x) {
    for (double& v : x) v = 1.0 - std::clamp(v, 0.0, 1.0);
    return x;
  };

  if (res.relative_residual > feasibility::kResidualTol) {
    res.status = Feasibility::Infeasible;
    return res;
  }

  if (res.solution_dim == 0) {
    std::vector<double> x(x_ls.data(), x_ls.data() + x_ls.size());
    const bool inside = std::all_of(x.begin(), x.end(), [](double v) {
      return v >= -feasibility::kBoxSlack && v <= 1.0 + feasibility::kBoxSlack;
    });
    res.status = inside ? Feasibility::UniqueFeasible : Feasibility::Infeasible;
    if (inside) res.phi1_point = to_phi1(std::move(x));
    return res;
  }

  auto vertex = feasibility::phase_one(A, K, J, b, 0.0, 1.0, feasibility::kBoxSlack);
  if (!vertex) {
    res.status = Feasibility::Infeasible;
    return res;
  }
  auto point = feasibility::project_affine_box(A, K, J, b, 0.0, 1.0, std::vector<double>(J, 0.5));
  Eigen::VectorXd pv = Eigen::Map<Eigen::VectorXd>(point.data(), static_cast<Eigen::Index>(J));
  if ((Am * pv - bv).norm() > feasibility::kBoxSlack * 10.0) point = *vertex;
  res.status = Feasibility::MultipleFeasible;
  res.phi1_point = to_phi1(std::move(point));
  return res;
}

FitReport fit_unrestricted_closed_form(const MarginTable& table) {
  FitReport rep;
  rep.model = Model::UnrestrictedBCMAR;
  rep.estimator = Estimator::ClosedForm;
  rep.warnings = validate(table);
  rep.theta = closed_form_theta(table);
  const auto cf = closed_form_mechanism(table);
  const auto feas = solve_phi1(rep.theta, table);
  rep.feasibility = feas.status;
  rep.phi1_unconstrained = feas.phi1_unconstrained;
  rep.solution_dim = feas.solution_dim;
  rep.iterations = 0;
  rep.converged = true;

  std::vector<double> phi1(table.J, kNaN);
  switch (feas.status) {
    case Feasibility::UniqueFeasible:
      phi1 = *feas.phi1_point;
      break;
    case Feasibility::MultipleFeasible:
      phi1 = *feas.phi1_point;
      rep.warnings.push_back("phi^(1) solution set has dimension " + std::to_string(feas.solution_dim) +
                             "; reporting the feasible point nearest the cube centre");
      break;
    case Feasibility::Unidentified:
      break;
    default:
      rep.full_ml = false;
      rep.warnings.emplace_back("closed form is not a full ML estimate; EM required");
      break;
  }
  rep.mechanism = Mechanism::unrestricted(cf.phi, cf.phi0, phi1);
  rep.loglik = rep.full_ml ? loglik(table, rep.theta, *rep.mechanism) : kNaN;
  return rep;
}

}  // namespace bcmar
