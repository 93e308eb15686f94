#pragma once

// Reference computations written independently of the library: direct
// pattern-probability loglikelihoods, a Nelder-Mead maximizer, and small
// helpers shared by the unit and acceptance tests.

#include <algorithm>
#include <array>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>
#include <random>
#include <vector>

#include "bcmar/table.hpp"

namespace oracle {

using bcmar::Count;
using bcmar::MarginTable;

inline constexpr double kNegInf = -std::numeric_limits<double>::infinity();

inline double xlogy(double n, double p) {
  if (n == 0.0) return 0.0;
  return p > 0.0 ? n * std::log(p) : kNegInf;
}

// Observed-data loglikelihood from the probability of each observed cell.
inline double loglik(const MarginTable& t, const std::vector<double>& theta, double phi,
                     const std::vector<double>& phi0, const std::vector<double>& phi1) {
  const std::size_t J = t.J, K = t.K;
  double ll = 0.0;
  for (std::size_t j = 0; j < J; ++j)
    for (std::size_t k = 0; k < K; ++k)
      ll += xlogy(static_cast<double>(t.complete[j * K + k]), theta[j * K + k] * (1 - phi) * (1 - phi0[j]));
  for (std::size_t j = 0; j < J; ++j) {
    double row = 0.0;
    for (std::size_t k = 0; k < K; ++k) row += theta[j * K + k];
    ll += xlogy(static_cast<double>(t.z1_only[j]), row * (1 - phi) * phi0[j]);
  }
  for (std::size_t k = 0; k < K; ++k) {
    double p = 0.0;
    for (std::size_t j = 0; j < J; ++j) p += theta[j * K + k] * phi * (1 - phi1[j]);
    ll += xlogy(static_cast<double>(t.z2_only[k]), p);
  }
  double p3 = 0.0;
  for (std::size_t j = 0; j < J; ++j)
    for (std::size_t k = 0; k < K; ++k) p3 += theta[j * K + k] * phi * phi1[j];
  ll += xlogy(static_cast<double>(t.neither), p3);
  return ll;
}

/// Minimizes f from x0 with the standard Nelder-Mead moves.
inline std::vector<double> nelder_mead(const std::function<double(const std::vector<double>&)>& f,
                                       std::vector<double> x0, double step, int max_evals, double ftol) {
  const std::size_t n = x0.size();
  std::vector<std::vector<double>> s(n + 1, x0);
  std::vector<double> fv(n + 1);
  for (std::size_t i = 0; i < n; ++i) s[i + 1][i] += step;
  for (std::size_t i = 0; i <= n; ++i) fv[i] = f(s[i]);
  int evals = static_cast<int>(n + 1);
  std::vector<std::size_t> order(n + 1);
  while (evals < max_evals) {
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return fv[a] < fv[b]; });
    const std::size_t best = order.front(), worst = order.back(), second = order[n - 1];
    if (std::abs(fv[worst] - fv[best]) <= ftol * (1.0 + std::abs(fv[best]))) {
      double spread = 0.0;
      for (std::size_t i = 0; i < n; ++i) spread = std::max(spread, std::abs(s[worst][i] - s[best][i]));
      if (spread < 1e-9) break;
    }
    std::vector<double> c(n, 0.0);
    for (std::size_t i = 0; i <= n; ++i)
      if (i != worst)
        for (std::size_t d = 0; d < n; ++d) c[d] += s[i][d] / static_cast<double>(n);
    auto along = [&](double t) {
      std::vector<double> x(n);
      for (std::size_t d = 0; d < n; ++d) x[d] = c[d] + t * (s[worst][d] - c[d]);
      return x;
    };
    const auto xr = along(-1.0);
    const double fr = f(xr);
    ++evals;
    if (fr < fv[best]) {
      const auto xe = along(-2.0);
      const double fe = f(xe);
      ++evals;
      if (fe < fr) s[worst] = xe, fv[worst] = fe;
      else s[worst] = xr, fv[worst] = fr;
    } else if (fr < fv[second]) {
      s[worst] = xr, fv[worst] = fr;
    } else {
      const auto xc = fr < fv[worst] ? along(-0.5) : along(0.5);
      const double fc = f(xc);
      ++evals;
      if (fc < std::min(fr, fv[worst])) {
        s[worst] = xc, fv[worst] = fc;
      } else {
        for (std::size_t i = 0; i <= n; ++i) {
          if (i == best) continue;
          for (std::size_t d = 0; d < n; ++d) s[i][d] = s[best][d] + 0.5 * (s[i][d] - s[best][d]);
          fv[i] = f(s[i]);
          ++evals;
        }
      }
    }
  }
  return s[std::min_element(fv.begin(), fv.end()) - fv.begin()];
}

inline double logistic(double x) { return 1.0 / (1.0 + std::exp(-x)); }

inline void softmax(const double* x, std::size_t n_free, std::vector<double>& p) {
  p.resize(n_free + 1);
  double mx = 0.0;
  for (std::size_t i = 0; i < n_free; ++i) mx = std::max(mx, x[i]);
  double s = p[n_free] = std::exp(-mx);
  for (std::size_t i = 0; i < n_free; ++i) s += p[i] = std::exp(x[i] - mx);
  for (double& v : p) v /= s;
}

enum class Variant { Unrestricted, Restricted, Mar };

/// Maximum of the observed loglikelihood over the variant's parameter space.
/// phi and, where free, phi^(0) enter the likelihood through separate
/// binomial kernels and are set to their closed-form maximizers; the rest is
/// searched with restarted Nelder-Mead over softmax / logistic coordinates.
/// `seed_point` (theta then phi1-type entries in (0,1)) adds one start.
inline double max_loglik(const MarginTable& t, Variant v, int random_starts, unsigned seed,
                         const std::vector<double>* seed_point = nullptr) {
  const std::size_t J = t.J, K = t.K, C = J * K;
  double n01 = 0.0, n23 = 0.0;
  std::vector<double> r0(J, 0.0), r1(J, 0.0);
  for (std::size_t j = 0; j < J; ++j) {
    for (std::size_t k = 0; k < K; ++k) r0[j] += static_cast<double>(t.complete[j * K + k]);
    r1[j] = static_cast<double>(t.z1_only[j]);
    n01 += r0[j] + r1[j];
  }
  for (Count c : t.z2_only) n23 += static_cast<double>(c);
  n23 += static_cast<double>(t.neither);
  const double phi = n23 / (n01 + n23);
  std::vector<double> phi0_hat(J, 0.5);
  for (std::size_t j = 0; j < J; ++j)
    if (r0[j] + r1[j] > 0) phi0_hat[j] = r1[j] / (r0[j] + r1[j]);

  const std::size_t n_mech = v == Variant::Mar ? 1 : J;
  const std::size_t dim = C - 1 + n_mech;
  std::vector<double> theta, p0, p1(J);
  auto objective = [&](const std::vector<double>& x) {
    softmax(x.data(), C - 1, theta);
    p0 = phi0_hat;
    for (std::size_t j = 0; j < J; ++j) {
      p1[j] = logistic(x[C - 1 + (v == Variant::Mar ? 0 : j)]);
      if (v == Variant::Restricted) p0[j] = p1[j];
    }
    const double ll = loglik(t, theta, phi, p0, p1);
    return std::isfinite(ll) ? -ll : 1e300;
  };

  auto to_coords = [&](const std::vector<double>& th, const std::vector<double>& mech) {
    std::vector<double> x(dim);
    const double last = std::max(th[C - 1], 1e-12);
    for (std::size_t c = 0; c + 1 < C; ++c) x[c] = std::log(std::max(th[c], 1e-12) / last);
    for (std::size_t m = 0; m < n_mech; ++m) {
      const double p = std::clamp(mech[m], 1e-9, 1 - 1e-9);
      x[C - 1 + m] = std::log(p / (1 - p));
    }
    return x;
  };

  std::vector<std::vector<double>> starts;
  starts.push_back(std::vector<double>(dim, 0.0));
  if (seed_point) {
    std::vector<double> th(seed_point->begin(), seed_point->begin() + static_cast<long>(C));
    std::vector<double> mech(seed_point->begin() + static_cast<long>(C), seed_point->end());
    starts.push_back(to_coords(th, mech));
  }
  std::mt19937 gen(seed);
  std::normal_distribution<double> nd(0.0, 1.5);
  for (int r = 0; r < random_starts; ++r) {
    std::vector<double> x(dim);
    for (double& e : x) e = nd(gen);
    starts.push_back(x);
  }

  double best = kNegInf;
  for (auto x : starts) {
    // Restart from the previous optimum until no further progress.
    double prev = std::numeric_limits<double>::infinity();
    for (int round = 0; round < 6; ++round) {
      x = nelder_mead(objective, x, round == 0 ? 1.0 : 0.25, 4000, 1e-13);
      const double f = objective(x);
      if (prev - f < 1e-9) break;
      prev = f;
    }
    best = std::max(best, -objective(x));
  }
  return best;
}

inline double binomial_sd(double p, double n) { return std::sqrt(p * (1 - p) / n); }

}  // namespace oracle
