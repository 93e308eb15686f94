#include <doctest.h>

#include <cmath>

#include "bcmar/em.hpp"
#include "bcmar/inference.hpp"
#include "oracle.hpp"
#include "tables.hpp"

using namespace bcmar;

TEST_SUITE("inference") {

TEST_CASE("chi-square tail against closed forms") {
  for (double x : {0.0, 0.5, 3.0, 10.0, 69.06}) {
    CHECK(chi_square_upper_tail(x, 2) == doctest::Approx(std::exp(-x / 2)).epsilon(1e-12));
    CHECK(chi_square_upper_tail(x, 1) == doctest::Approx(std::erfc(std::sqrt(x / 2))).epsilon(1e-12));
  }
  CHECK(chi_square_upper_tail(3.841458820694124, 1) == doctest::Approx(0.05).epsilon(1e-10));
}

TEST_CASE("likelihood-ratio test on the Muscatine girls") {
  const auto t = tables::girls();
  const auto full = fit(t, Model::UnrestrictedBCMAR);
  const auto res = lrt(full, fit(t, Model::RestrictedBCMAR));
  CHECK(res.df == 2);
  CHECK(res.stat == doctest::Approx(69.062).epsilon(0.1 / 69.062));
  CHECK(res.p_value == doctest::Approx(std::exp(-res.stat / 2)).epsilon(1e-10));
  CHECK(res.loglik_full == full.loglik);

  const auto mar = lrt(full, fit(t, Model::RestrictedMAR));
  CHECK(mar.df == 1);
  CHECK(mar.stat < 1.0);
}

TEST_CASE("LRT guards") {
  const auto t = tables::t3a();
  const auto full = fit(t, Model::UnrestrictedBCMAR);
  const auto restricted = fit(t, Model::RestrictedBCMAR);
  try {
    lrt(restricted, full);
    FAIL("expected NonNested");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::NonNested);
  }
  CHECK_THROWS_AS(lrt(fit(t, Model::RestrictedMAR), restricted), Error);
  CHECK_THROWS_AS(lrt(full, full), Error);

  // A submodel fit that reaches the full maximum gives stat 0, p 1.
  FitReport same = restricted;
  same.loglik = full.loglik;
  const auto zero = lrt(full, same);
  CHECK(zero.stat == 0.0);
  CHECK(zero.p_value == doctest::Approx(1.0));

  FitReport stalled = restricted;
  stalled.converged = false;
  try {
    lrt(full, stalled);
    FAIL("expected FailedFit");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::FailedFit);
  }
}

TEST_CASE("parameter flattening") {
  const auto names = [](const FitReport& r) {
    std::vector<std::string> out;
    for (const auto& nv : flatten_parameters(r)) out.push_back(nv.name);
    return out;
  };
  const auto t = tables::t3a();
  CHECK(names(fit(t, Model::UnrestrictedBCMAR)) ==
        std::vector<std::string>{"theta[1,1]", "theta[1,2]", "theta[2,1]", "theta[2,2]", "phi", "phi0[1]",
                                 "phi0[2]", "phi1[1]", "phi1[2]"});
  CHECK(names(fit(t, Model::RestrictedBCMAR)).back() == "phi_j[2]");
  CHECK(names(fit(t, Model::RestrictedMAR)).back() == "phi1");
  CHECK(names(fit(t, Model::Reduced)).size() == 4);
}

TEST_CASE("resampling keeps the sample size and is reproducible") {
  const auto t = tables::girls();
  const auto a = resample_table(t, 7, 3);
  CHECK(a.total() == t.total());
  CHECK(a == resample_table(t, 7, 3));
  CHECK_FALSE(a == resample_table(t, 7, 4));
  CHECK_FALSE(a == resample_table(t, 8, 3));
  // Empty cells stay empty.
  const auto sparse = MarginTable::from_rows({{5, 0}, {3, 2}}, {0, 4}, {1, 0}, 2);
  for (int r = 0; r < 20; ++r) {
    const auto s = resample_table(sparse, 1, static_cast<std::uint64_t>(r));
    CHECK(s.cell(0, 1) == 0);
    CHECK(s.z1_only[0] == 0);
    CHECK(s.z2_only[1] == 0);
  }
}

TEST_CASE("bootstrap is bit-identical across thread counts") {
  BootstrapConfig cfg;
  cfg.replicates = 40;
  cfg.seed = 5;
  cfg.threads = 1;
  const auto one = bootstrap_se(tables::t3b(), cfg);
  cfg.threads = 3;
  const auto three = bootstrap_se(tables::t3b(), cfg);
  REQUIRE(one.se.size() == three.se.size());
  for (std::size_t i = 0; i < one.se.size(); ++i) CHECK(one.se[i].value == three.se[i].value);
  CHECK(one.infeasible_fraction == three.infeasible_fraction);
  CHECK(one.infeasible_fraction > 0.5);
}

TEST_CASE("bootstrap SE of phi follows the binomial standard deviation") {
  BootstrapConfig cfg;
  cfg.model = Model::RestrictedMAR;
  cfg.replicates = 400;
  cfg.seed = 2;
  const auto t = tables::girls();
  const auto res = bootstrap_se(t, cfg);
  const double n = static_cast<double>(t.total());
  const double phi = static_cast<double>(t.n2() + t.n3()) / n;
  for (std::size_t i = 0; i < res.estimate.size(); ++i) {
    if (res.estimate[i].name != "phi") continue;
    CHECK(res.se[i].value == doctest::Approx(oracle::binomial_sd(phi, n)).epsilon(0.15));
    CHECK(res.contributing[i] == 400);
  }
  CHECK(res.failures == 0);
}

TEST_CASE("bootstrap of the reduced fit has no mechanism entries") {
  BootstrapConfig cfg;
  cfg.model = Model::Reduced;
  cfg.replicates = 10;
  const auto res = bootstrap_se(tables::t3a(), cfg);
  CHECK(res.estimate.size() == 4);
  CHECK(res.infeasible_fraction == 0.0);
}

TEST_CASE("information SE on complete data is the multinomial SD") {
  const auto t = MarginTable::from_rows({{120, 40}, {25, 65}}, {0, 0}, {0, 0}, 0);
  const auto th = fit(t, Model::Reduced).theta;
  const auto se = reduced_information_se(t, th);
  const double n = 250.0;
  for (std::size_t i = 0; i < 4; ++i)
    CHECK(se[i] == doctest::Approx(oracle::binomial_sd(th.p[i], n)).epsilon(1e-4));
}

TEST_CASE("information SE is finite with supplemental margins") {
  const auto t = tables::t3a();
  const auto se = reduced_information_se(t, fit(t, Model::Reduced).theta);
  for (double s : se) {
    CHECK(std::isfinite(s));
    CHECK(s > 0.0);
  }
}

}  // TEST_SUITE
