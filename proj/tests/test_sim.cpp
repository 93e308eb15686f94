#include <doctest.h>

#include <cmath>

#include "bcmar/em.hpp"
#include "bcmar/sim.hpp"

using namespace bcmar;

namespace {

// Exponential waiting times: t(z) = z, eta = -rate. No sampler on purpose.
class Exponential final : public ExpFamily {
 public:
  std::string name() const override { return "exponential"; }
  std::size_t stat_dim() const override { return 1; }
  Vec sufficient_stat(std::span<const double> z) const override { return {z[0]}; }
  double log_base(std::span<const double>) const override { return 0.0; }
  double log_normalizer(std::span<const double> eta) const override { return -std::log(-eta[0]); }
  Vec mean_map(std::span<const double> eta) const override { return {-1.0 / eta[0]}; }
  Vec natural_from_mean(std::span<const double> m) const override { return {-1.0 / m[0]}; }
  bool in_domain(std::span<const double> eta) const override { return eta[0] < 0.0; }
};

const CellProbs kTheta(2, 2, {0.1, 0.4, 0.3, 0.2});
const Mechanism kMech = Mechanism::unrestricted(0.3, {0.2, 0.5}, {0.7, 0.1});

}  // namespace

TEST_SUITE("sim") {

TEST_CASE("zero cases give an empty table") {
  const auto t = simulate_table({0, kTheta, kMech, 1});
  CHECK(t.total() == 0);
  CHECK(t.J == 2);
  const auto d = simulate_expfam({0, ExpFamModel{{1.0}, {{0.0}}, Mechanism::unrestricted(0.5, {0.5}, {0.5}),
                                                 family_normal(1.0)},
                                  1});
  CHECK(d.cases.empty());
}

TEST_CASE("phi = 1 leaves only patterns with Z1 missing") {
  const auto t = simulate_table({500, kTheta, Mechanism::unrestricted(1.0, {0.2, 0.5}, {0.7, 0.1}), 2});
  CHECK(t.n0() == 0);
  CHECK(t.n1() == 0);
  CHECK(t.n2() + t.n3() == 500);
}

TEST_CASE("phi = 0 gives fully complete expfam data") {
  ExpFamModel m{{0.5, 0.5}, {{-1.0}, {1.0}}, Mechanism::unrestricted(0.0, {0.0, 0.0}, {0.3, 0.3}), family_normal(1.0)};
  const auto d = simulate_expfam({300, m, 3});
  CHECK(d.count(Pattern::Complete) == 300);
}

TEST_CASE("same spec, same data") {
  CHECK(simulate_table({1000, kTheta, kMech, 9}) == simulate_table({1000, kTheta, kMech, 9}));
  CHECK_FALSE(simulate_table({1000, kTheta, kMech, 9}) == simulate_table({1000, kTheta, kMech, 10}));
  ExpFamModel m{{0.3, 0.7}, {{-1.0}, {1.0}}, kMech, family_normal(1.0)};
  const auto a = simulate_expfam({200, m, 4}), b = simulate_expfam({200, m, 4});
  for (std::size_t i = 0; i < 200; ++i) {
    CHECK(a.cases[i].z1 == b.cases[i].z1);
    CHECK(a.cases[i].z2 == b.cases[i].z2);
  }
}

TEST_CASE("pattern frequencies within four standard errors") {
  const Count n = 100000;
  for (const auto& mech : {kMech, Mechanism::restricted(0.3, {0.2, 0.6}), Mechanism::restricted_mar(0.25, {0.1, 0.4}, 0.3),
                           mcar_mechanism(2, 0.2, 0.35)}) {
    const auto t = simulate_table({n, kTheta, mech, 77});
    const auto pi = pattern_probabilities(kTheta, mech);
    const double counts[4] = {static_cast<double>(t.n0()), static_cast<double>(t.n1()), static_cast<double>(t.n2()),
                              static_cast<double>(t.n3())};
    for (int r = 0; r < 4; ++r) {
      const double sd = std::sqrt(pi[r] * (1 - pi[r]) / static_cast<double>(n));
      CHECK(std::abs(counts[r] / static_cast<double>(n) - pi[r]) < 4 * sd);
    }
  }
}

TEST_CASE("expfam pattern proportions near their analytic values") {
  ExpFamModel m{{0.4, 0.6}, {{-1.0}, {1.0}}, Mechanism::unrestricted(0.2, {0.1, 0.3}, {0.5, 0.1}), family_normal(1.0)};
  const auto d = simulate_expfam({5000, m, 2024});
  const auto pi = pattern_probabilities(m);
  CHECK(pi[3] == doctest::Approx(0.2 * (0.4 * 0.5 + 0.6 * 0.1)));
  for (Pattern p : {Pattern::Complete, Pattern::Z1Only, Pattern::Z2Only, Pattern::Neither})
    CHECK(std::abs(static_cast<double>(d.count(p)) / 5000 - pi[static_cast<int>(p)]) < 0.02);
}

TEST_CASE("family without a sampler is rejected") {
  ExpFamModel m{{1.0}, {{-2.0}}, Mechanism::unrestricted(0.2, {0.1}, {0.1}), std::make_shared<Exponential>()};
  CHECK_THROWS_AS(simulate_expfam({10, m, 1}), Error);
  // The family still works for fitting.
  ExpFamDataset d{1, {{0, Vec{0.5}}, {0, Vec{1.5}}, {std::nullopt, Vec{1.0}}}};
  const auto fit = expfam_em(d, expfam_default_start(d, m.family));
  CHECK(fit.model.means()[0][0] == doctest::Approx(1.0));
}

TEST_CASE("unidentified mechanism entries cannot be simulated") {
  const auto nan = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(simulate_table({10, kTheta, Mechanism::unrestricted(0.2, {0.1, 0.2}, {nan, 0.1}), 1}), Error);
}

TEST_CASE("large-sample refit recovers the truth") {
  const auto t = simulate_table({200000, kTheta, kMech, 8});
  const auto r = fit(t, Model::UnrestrictedBCMAR);
  for (std::size_t i = 0; i < 4; ++i) CHECK(std::abs(r.theta.p[i] - kTheta.p[i]) < 0.01);
}

}  // TEST_SUITE
