#include "ddqp/oracle.hpp"

#include "ddqp/harness.hpp"
#include "fixtures.hpp"

#include <doctest.h>

#include <random>

using namespace ddqp;

TEST_CASE("reference solve on P1 matches the hand KKT values") {
  const CoupledQP qp = fixtures::p1();
  const auto ref = oracle::reference_solve(qp, 1e-10);
  CHECK(ref.u_star[0] == doctest::Approx(0.5).epsilon(1e-9));
  CHECK(ref.u_star[1] == doctest::Approx(0.5).epsilon(1e-9));
  CHECK(ref.lambda_star[0] == doctest::Approx(0.5).epsilon(1e-9));
  CHECK(ref.F_star == doctest::Approx(0.25).epsilon(1e-10));
  CHECK(ref.kkt.max() <= 1e-10);
}

TEST_CASE("reference solve with inactive coupling") {
  CoupledQP qp = fixtures::p1();
  qp.g[0] = -100.0;  // constraint never active
  const auto ref = oracle::reference_solve(qp, 1e-10);
  CHECK(ref.lambda_star.norm() <= 1e-10);
  CHECK(ref.u_star.norm() <= 1e-9);
  CHECK(ref.F_star == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("reference solve detects infeasibility") {
  CoupledQP qp = fixtures::p1();
  qp.g[0] = 25.0;  // needs u1 + u2 >= 25, impossible in [-10,10]^2... just barely
  qp.box = Box::centered(2, 10.0);
  CHECK_THROWS_AS(oracle::reference_solve(qp), oracle::InfeasibleProblem);
}

TEST_CASE("reference solve on random instances") {
  for (uint64_t seed : {1u, 2u, 3u, 4u}) {
    const CoupledQP qp = harness::gen_random_qp(10, seed);
    const auto ref = oracle::reference_solve(qp, 1e-9);
    CHECK(ref.kkt.max() <= 1e-9);
    CHECK(qp.box.contains(ref.u_star, 1e-9));
    CHECK(ref.lambda_star.minCoeff() >= 0);

    // local optimality probe: feasible perturbations cannot beat F*
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> nd(0.0, 1e-3);
    for (int probe = 0; probe < 5; ++probe) {
      Vec d(qp.n());
      for (Index i = 0; i < qp.n(); ++i) d[i] = nd(rng);
      const Vec u = box_project(qp.box, ref.u_star + d);
      if (violation_norm(qp, u) == 0.0) CHECK(objective(qp, u) >= ref.F_star - 1e-10);
    }
  }
}

TEST_CASE("exact_inner on P1") {
  const CoupledQP qp = fixtures::p1();
  SUBCASE("at lambda = 0.5") {
    const auto [u, d] = oracle::exact_inner(qp, Vec::Constant(1, 0.5), 1e-12);
    CHECK(u[0] == doctest::Approx(0.5).epsilon(1e-9));
    CHECK(u[1] == doctest::Approx(0.5).epsilon(1e-9));
    CHECK(d == doctest::Approx(0.25).epsilon(1e-10));
  }
  SUBCASE("at lambda = 0 the box minimum of F") {
    const auto [u, d] = oracle::exact_inner(qp, Vec::Zero(1), 1e-12);
    CHECK(u.norm() <= 1e-6);
    CHECK(d == doctest::Approx(0.0).epsilon(1e-10));
  }
  SUBCASE("dual values match the hand formula") {
    for (double lam : {0.1, 0.3, 0.7, 1.0, 2.0}) {
      const auto [u, d] = oracle::exact_inner(qp, Vec::Constant(1, lam), 1e-12);
      (void)u;
      CHECK(d == doctest::Approx(fixtures::p1_dual(lam)).epsilon(1e-9));
    }
  }
}

TEST_CASE("dual function是 concave along random segments") {
  const CoupledQP qp = harness::gen_random_qp(8, 17);
  std::mt19937_64 rng(17);
  const double tol = 1e-10;
  for (int probe = 0; probe < 10; ++probe) {
    const Vec l1 = fixtures::random_nonneg(qp.p(), 2.0, rng);
    const Vec l2 = fixtures::random_nonneg(qp.p(), 2.0, rng);
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    const double theta = unif(rng);
    const double d1 = oracle::exact_inner(qp, l1, tol).second;
    const double d2 = oracle::exact_inner(qp, l2, tol).second;
    const double dm = oracle::exact_inner(qp, Vec(theta * l1 + (1 - theta) * l2), tol).second;
    CHECK(dm >= theta * d1 + (1 - theta) * d2 - 2 * tol - 1e-12);
  }
}

TEST_CASE("dual gradient matches finite differences") {
  const CoupledQP qp = harness::gen_random_qp(6, 23);
  std::mt19937_64 rng(23);
  const double tol = 1e-12;
  for (int probe = 0; probe < 4; ++probe) {
    const Vec lam = fixtures::random_nonneg(qp.p(), 1.0, rng).array() + 0.05;
    const auto [u, d0] = oracle::exact_inner(qp, lam, tol);
    (void)d0;
    const Vec grad = constraints(qp, u);
    const double h = 1e-6;
    for (Index j = 0; j < 3; ++j) {  // a few coordinates suffice
      Vec lp = lam, lm = lam;
      lp[j] += h;
      lm[j] -= h;
      const double dp = oracle::exact_inner(qp, lp, tol).second;
      const double dm = oracle::exact_inner(qp, lm, tol).second;
      const double fd = (dp - dm) / (2 * h);
      CHECK(grad[j] == doctest::Approx(fd).epsilon(1e-5));
    }
  }
}

TEST_CASE("dual gradient is L_d-Lipschitz") {
  const CoupledQP qp = harness::gen_random_qp(8, 29);
  const double L_d = constants(qp).L_d_exact;
  std::mt19937_64 rng(29);
  for (int probe = 0; probe < 10; ++probe) {
    const Vec l1 = fixtures::random_nonneg(qp.p(), 2.0, rng);
    const Vec l2 = fixtures::random_nonneg(qp.p(), 2.0, rng);
    const Vec h1 = constraints(qp, oracle::exact_inner(qp, l1, 1e-12).first);
    const Vec h2 = constraints(qp, oracle::exact_inner(qp, l2, 1e-12).first);
    CHECK((h1 - h2).norm() <= L_d * (l1 - l2).norm() * (1 + 1e-6) + 1e-9);
  }
}

TEST_CASE("kkt_residual") {
  const CoupledQP qp = fixtures::p1();
  Vec ustar(2);
  ustar << 0.5, 0.5;
  const Vec lamstar = Vec::Constant(1, 0.5);
  CHECK(oracle::kkt_residual(qp, ustar, lamstar).max() <= 1e-10);

  SUBCASE("inactive coupling, box minimum") {
    CoupledQP qp2 = qp;
    qp2.g[0] = -5.0;
    CHECK(oracle::kkt_residual(qp2, Vec::Zero(2), Vec::Zero(1)).max() <= 1e-12);
  }
  SUBCASE("perturbation grows the stationarity residual linearly") {
    for (double delta : {1e-4, 1e-3, 1e-2}) {
      Vec u = ustar;
      u[0] += delta;
      const double r = oracle::kkt_residual(qp, u, lamstar).stationarity;
      CHECK(r >= 0.5 * delta);
      CHECK(r <= 10 * delta);
    }
  }
}

TEST_CASE("slater point finder") {
  CHECK(oracle::slater_point(fixtures::p1()));
  const CoupledQP qp = harness::gen_random_qp(10, 31);
  const auto s = oracle::slater_point(qp);
  REQUIRE(s);
  CHECK(constraints(qp, *s).maxCoeff() < 0);
}
