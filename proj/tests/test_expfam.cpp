#include <doctest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "bcmar/expfam.hpp"
#include "bcmar/sim.hpp"

using namespace bcmar;

namespace {

double normal_pdf(double z, double mu, double var) {
  return std::exp(-(z - mu) * (z - mu) / (2 * var)) / std::sqrt(2 * std::numbers::pi * var);
}

struct NormalTruth {
  std::vector<double> theta1, mu;
  double var;
  double phi;
  std::vector<double> phi0, phi1;

  ExpFamModel model() const {
    ExpFamModel m;
    m.family = family_normal(var);
    m.theta1 = theta1;
    for (double x : mu) m.theta2.push_back({x / var});
    m.mech = Mechanism::unrestricted(phi, phi0, phi1);
    return m;
  }
};

// Per-case loglik from the four pattern contributions, using the normal
// density directly rather than its exponential-family form.
double per_case_loglik(const ExpFamDataset& d, const NormalTruth& t) {
  double ll = 0.0;
  const std::size_t J = t.theta1.size();
  for (const auto& c : d.cases) {
    double a = 0.0;
    switch (c.pattern()) {
      case Pattern::Complete: {
        const auto j = static_cast<std::size_t>(*c.z1);
        a = t.theta1[j] * normal_pdf((*c.z2)[0], t.mu[j], t.var) * (1 - t.phi) * (1 - t.phi0[j]);
        break;
      }
      case Pattern::Z1Only: {
        const auto j = static_cast<std::size_t>(*c.z1);
        a = t.theta1[j] * (1 - t.phi) * t.phi0[j];
        break;
      }
      case Pattern::Z2Only:
        for (std::size_t j = 0; j < J; ++j)
          a += t.phi * t.theta1[j] * (1 - t.phi1[j]) * normal_pdf((*c.z2)[0], t.mu[j], t.var);
        break;
      case Pattern::Neither:
        for (std::size_t j = 0; j < J; ++j) a += t.phi * t.theta1[j] * t.phi1[j];
        break;
    }
    ll += std::log(a);
  }
  return ll;
}

ExpFamDataset random_dataset(std::mt19937& gen, std::size_t J, int n) {
  ExpFamDataset d;
  d.J = J;
  std::uniform_int_distribution<int> cls(0, static_cast<int>(J) - 1), pat(0, 3);
  std::normal_distribution<double> z(0.0, 2.0);
  for (int i = 0; i < n; ++i) {
    ExpFamCase c;
    const int p = i < static_cast<int>(2 * J) ? 0 : pat(gen);
    const int j = i < static_cast<int>(2 * J) ? i % static_cast<int>(J) : cls(gen);
    if (p == 0 || p == 1) c.z1 = j;
    if (p == 0 || p == 2) c.z2 = Vec{z(gen) + j};
    d.cases.push_back(c);
  }
  return d;
}

const NormalTruth kScenario{{0.4, 0.6}, {-1.0, 1.0}, 1.0, 0.2, {0.1, 0.3}, {0.5, 0.1}};

std::vector<double> fd_gradient(const ExpFamily& f, std::vector<double> eta) {
  std::vector<double> g(eta.size());
  for (std::size_t v = 0; v < eta.size(); ++v) {
    const double h = 1e-6 * (1 + std::abs(eta[v]));
    auto up = eta, dn = eta;
    up[v] += h;
    dn[v] -= h;
    g[v] = (f.log_normalizer(up) - f.log_normalizer(dn)) / (2 * h);
  }
  return g;
}

}  // namespace

TEST_SUITE("expfam") {

TEST_CASE("unknown-variance normal: standard normal and its boundary") {
  const auto f = family_normal();
  const auto eta = f->natural_from_mean(std::vector<double>{0.0, 1.0});
  CHECK(eta[0] == doctest::Approx(0.0));
  CHECK(eta[1] == doctest::Approx(-0.5));
  const auto back = f->mean_map(eta);
  CHECK(std::abs(back[0]) < 1e-10);
  CHECK(std::abs(back[1] - 1.0) < 1e-10);
  CHECK(f->log_density(std::vector<double>{0.7}, eta) == doctest::Approx(std::log(normal_pdf(0.7, 0, 1))));
  try {
    f->natural_from_mean(std::vector<double>{0.0, 0.0});
    FAIL("expected DomainError");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::DomainError);
  }
  CHECK_THROWS_AS(family_normal(0.0), Error);
}

TEST_CASE("mean map is the gradient of the log-normalizer") {
  std::mt19937 gen(4);
  std::uniform_real_distribution<double> u(-2.0, 2.0), neg(-3.0, -0.1);
  for (const FamilyPtr& f : {family_normal(), family_normal(2.5), family_poisson()}) {
    for (int rep = 0; rep < 20; ++rep) {
      std::vector<double> eta(f->stat_dim());
      eta[0] = u(gen);
      if (eta.size() == 2) eta[1] = neg(gen);
      const auto fd = fd_gradient(*f, eta);
      const auto mm = f->mean_map(eta);
      for (std::size_t v = 0; v < eta.size(); ++v) CHECK(std::abs(fd[v] - mm[v]) < 1e-5);
      const auto rt = f->natural_from_mean(mm);
      for (std::size_t v = 0; v < eta.size(); ++v) CHECK(std::abs(rt[v] - eta[v]) < 1e-8);
    }
  }
}

TEST_CASE("single complete case with one class") {
  ExpFamDataset d{1, {{0, Vec{0.3}}}};
  ExpFamModel m;
  m.family = family_normal(1.0);
  m.theta1 = {1.0};
  m.theta2 = {{0.0}};
  m.mech = Mechanism::unrestricted(0.2, {0.1}, {0.4});
  CHECK(expfam_loglik(d, m) ==
        doctest::Approx(std::log(normal_pdf(0.3, 0, 1)) + std::log(0.8) + std::log(0.9)).epsilon(1e-13));
}

TEST_CASE("loglik matches the per-case oracle") {
  std::mt19937 gen(8);
  std::uniform_real_distribution<double> u(0.05, 0.95), mu(-2, 2);
  for (int rep = 0; rep < 20; ++rep) {
    const std::size_t J = 2 + rep % 3;
    const auto d = random_dataset(gen, J, 60);
    NormalTruth t{{}, {}, 0.5 + u(gen), u(gen), {}, {}};
    double s = 0.0;
    for (std::size_t j = 0; j < J; ++j) {
      t.theta1.push_back(u(gen));
      s += t.theta1.back();
      t.mu.push_back(mu(gen));
      t.phi0.push_back(u(gen));
      t.phi1.push_back(u(gen));
    }
    for (double& p : t.theta1) p /= s;
    CHECK(expfam_loglik(d, t.model()) == doctest::Approx(per_case_loglik(d, t)).epsilon(1e-12));
  }
}

TEST_CASE("membership weights are probability vectors") {
  std::mt19937 gen(9);
  const auto d = random_dataset(gen, 3, 200);
  auto m = NormalTruth{{0.2, 0.3, 0.5}, {-3, 0, 40}, 1.0, 0.3, {0.1, 0.2, 0.3}, {0.4, 0.5, 0.6}}.model();
  for (const auto& w : p2_memberships(d, m)) {
    double s = 0.0;
    for (double x : w) {
      CHECK(x >= 0.0);
      s += x;
    }
    CHECK(s == doctest::Approx(1.0).epsilon(1e-15));
  }
  const auto w3 = p3_membership(m);
  CHECK(w3[0] + w3[1] + w3[2] == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(w3[2] == doctest::Approx(0.3 / (0.08 + 0.15 + 0.3)));
}

TEST_CASE("EM ascent on random small datasets") {
  std::mt19937 gen(12);
  for (int rep = 0; rep < 10; ++rep) {
    const auto d = random_dataset(gen, 2 + rep % 2, 40);
    const auto fit = expfam_em(d, expfam_default_start(d, family_normal(1.0)));
    for (std::size_t i = 1; i < fit.trace.size(); ++i) CHECK(fit.trace[i].loglik >= fit.trace[i - 1].loglik - 1e-9);
  }
}

TEST_CASE("block-monotone data: one EM step reaches the reduced fit") {
  ExpFamDataset d{2, {{0, Vec{1.0}}, {0, Vec{2.0}}, {1, Vec{-1.0}}, {1, Vec{0.5}}, {1, std::nullopt}, {0, std::nullopt}}};
  const auto fam = family_normal(1.0);
  const auto reduced = expfam_reduced_fit(d, fam);
  CHECK(reduced.model.means()[0][0] == doctest::Approx(1.5));
  CHECK(reduced.model.means()[1][0] == doctest::Approx(-0.25));
  CHECK(reduced.model.theta1[0] == doctest::Approx(0.5));
  CHECK(std::isnan(reduced.model.mech.phi1[0]));

  EmConfig one;
  one.max_iters = 1;
  const auto em = expfam_em(d, expfam_default_start(d, fam), one);
  for (std::size_t j = 0; j < 2; ++j) {
    CHECK(em.model.theta1[j] == doctest::Approx(reduced.model.theta1[j]).epsilon(1e-14));
    CHECK(em.model.theta2[j][0] == doctest::Approx(reduced.model.theta2[j][0]).epsilon(1e-14));
  }
}

TEST_CASE("reduced fit errors and complete data") {
  const auto fam = family_normal();
  ExpFamDataset orphan{2, {{0, Vec{1.0}}, {0, Vec{2.0}}, {1, std::nullopt}}};
  try {
    expfam_reduced_fit(orphan, fam);
    FAIL("expected UndefinedConditional");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::UndefinedConditional);
  }
  ExpFamDataset complete{1, {{0, Vec{1.0}}, {0, Vec{2.0}}, {0, Vec{4.0}}}};
  const auto r = expfam_reduced_fit(complete, fam);
  const auto psi = r.model.means()[0];
  CHECK(psi[0] == doctest::Approx(7.0 / 3));
  CHECK(psi[1] == doctest::Approx(21.0 / 3));
}

TEST_CASE("one class: closed forms for phi1 and the outcome") {
  ExpFamDataset d{1, {{0, Vec{1.0}}, {0, Vec{3.0}}, {std::nullopt, Vec{5.0}}, {std::nullopt, std::nullopt},
                      {std::nullopt, std::nullopt}, {0, std::nullopt}}};
  const auto fit = expfam_em(d, expfam_default_start(d, family_normal(1.0)));
  CHECK(fit.converged);
  CHECK(fit.model.theta1[0] == doctest::Approx(1.0));
  CHECK(fit.model.mech.phi1[0] == doctest::Approx(2.0 / 3).epsilon(1e-8));
  // Every observed outcome belongs to the single class.
  CHECK(fit.model.means()[0][0] == doctest::Approx(3.0).epsilon(1e-10));
}

TEST_CASE("M step outside the mean space names the class") {
  ExpFamDataset d{2, {{0, Vec{1.0}}, {1, Vec{2.0}}, {1, Vec{3.0}}}};
  try {
    expfam_em(d, expfam_default_start(d, family_normal()));
    FAIL("expected DomainError");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::DomainError);
    CHECK(std::string(e.what()).find("class 1") != std::string::npos);
  }
}

TEST_CASE("converged EM is stationary") {
  const auto d = simulate_expfam({300, kScenario.model(), 21});
  EmConfig cfg;
  cfg.tol_param = 1e-11;
  cfg.tol_loglik = 1e-12;
  const auto fit = expfam_em(d, expfam_default_start(d, family_normal(1.0)), cfg);
  REQUIRE(fit.converged);
  const auto& m = fit.model;
  const double h = 1e-6;
  auto at = [&](auto&& tweak) {
    ExpFamModel x = m;
    tweak(x);
    return expfam_loglik(d, x);
  };
  for (std::size_t j = 0; j < 2; ++j) {
    const double g_eta =
        (at([&](ExpFamModel& x) { x.theta2[j][0] += h; }) - at([&](ExpFamModel& x) { x.theta2[j][0] -= h; })) / (2 * h);
    CHECK(std::abs(g_eta) < 1e-4);
    if (m.mech.phi1[j] > 1e-3 && m.mech.phi1[j] < 1 - 1e-3) {
      const double g_phi = (at([&](ExpFamModel& x) { x.mech.phi1[j] += h; }) -
                            at([&](ExpFamModel& x) { x.mech.phi1[j] -= h; })) /
                           (2 * h);
      CHECK(std::abs(g_phi) < 1e-4);
    }
  }
  const double g_theta = (at([&](ExpFamModel& x) { x.theta1[0] += h, x.theta1[1] -= h; }) -
                          at([&](ExpFamModel& x) { x.theta1[0] -= h, x.theta1[1] += h; })) /
                         (2 * h);
  CHECK(std::abs(g_theta) < 1e-4);
}

TEST_CASE("two-class normal recovery and reduced-fit comparison") {
  const auto truth = kScenario.model();
  const auto d = simulate_expfam({5000, truth, 2024});
  const auto fit = expfam_em(d, expfam_default_start(d, family_normal(1.0)));
  REQUIRE(fit.converged);
  const auto means = fit.model.means();
  CHECK(std::abs(means[0][0] + 1.0) < 0.1);
  CHECK(std::abs(means[1][0] - 1.0) < 0.1);
  CHECK(std::abs(fit.model.theta1[0] - 0.4) < 0.03);

  ExpFamModel reduced = expfam_reduced_fit(d, family_normal(1.0)).model;
  reduced.mech = fit.model.mech;
  CHECK(expfam_loglik(d, reduced) <= fit.loglik + 1e-9);
}

TEST_CASE("Poisson outcomes") {
  ExpFamModel m;
  m.family = family_poisson();
  m.theta1 = {0.5, 0.5};
  m.theta2 = {{std::log(2.0)}, {std::log(9.0)}};
  m.mech = Mechanism::unrestricted(0.25, {0.1, 0.2}, {0.3, 0.4});
  const auto d = simulate_expfam({4000, m, 5});
  const auto fit = expfam_em(d, expfam_default_start(d, family_poisson()));
  CHECK(fit.converged);
  CHECK(fit.model.means()[0][0] == doctest::Approx(2.0).epsilon(0.1));
  CHECK(fit.model.means()[1][0] == doctest::Approx(9.0).epsilon(0.05));
}

}  // TEST_SUITE
