#include "ddqp/model.hpp"

#include "ddqp/harness.hpp"
#include "ddqp/json_io.hpp"
#include "fixtures.hpp"

#include <doctest.h>

#include <cmath>
#include <random>

using namespace ddqp;

TEST_CASE("validate_problem") {
  CoupledQP qp = fixtures::p1();
  CHECK(validate_problem(qp).ok());

  SUBCASE("indefinite H") {
    qp.H << 1, 2, 2, 1;  // eigenvalues 3 and -1
    const auto rep = validate_problem(qp);
    REQUIRE_FALSE(rep.ok());
    CHECK(rep.str().find("positive definite") != std::string::npos);
  }
  SUBCASE("infeasible zero row") {
    qp.G.setZero();
    qp.g[0] = 0.5;
    const auto rep = validate_problem(qp);
    REQUIRE_FALSE(rep.ok());
    CHECK(rep.str().find("infeasible zero row") != std::string::npos);
  }
  SUBCASE("redundant zero row") {
    qp.G.setZero();
    qp.g[0] = -0.5;
    CHECK_FALSE(validate_problem(qp).ok());
  }
  SUBCASE("lb above ub") {
    qp.box.lb[1] = 11.0;
    CHECK_FALSE(validate_problem(qp).ok());
  }
  SUBCASE("dimension mismatch") {
    qp.q = Vec::Zero(3);
    CHECK_FALSE(validate_problem(qp).ok());
  }
}

TEST_CASE("objective and constraints on P1") {
  const CoupledQP qp = fixtures::p1();
  Vec u(2);
  u << 0.5, 0.5;
  CHECK(objective(qp, u) == doctest::Approx(0.25));
  CHECK(objective(qp, Vec::Zero(2)) == 0.0);

  CoupledQP qp2 = qp;
  qp2.H = 2.0 * Mat::Identity(2, 2);
  CHECK(objective(qp2, u) == doctest::Approx(0.5));

  CHECK(constraints(qp, u)[0] == doctest::Approx(0.0));
  CHECK(constraints(qp, Vec::Zero(2))[0] == doctest::Approx(1.0));
  Vec ones = Vec::Ones(2);
  CHECK(constraints(qp, ones)[0] == doctest::Approx(-1.0));
  CHECK(violation_norm(qp, ones) == 0.0);

  CHECK_THROWS_AS(objective(qp, Vec::Zero(3)), std::invalid_argument);
}

TEST_CASE("lagrangian on P1") {
  const CoupledQP qp = fixtures::p1();
  Vec u0 = Vec::Zero(2);
  Vec uh(2);
  uh << 0.5, 0.5;
  Vec lam = Vec::Constant(1, 0.5);
  CHECK(lagrangian(qp, u0, Vec::Zero(1)) == doctest::Approx(0.0));
  CHECK(lagrangian(qp, u0, lam) == doctest::Approx(0.5));
  CHECK(lagrangian(qp, uh, lam) == doctest::Approx(0.25));
  CHECK_THROWS_AS(lagrangian(qp, u0, Vec::Constant(1, -0.1)), std::invalid_argument);
}

TEST_CASE("block gradient on P1") {
  const CoupledQP qp = fixtures::p1();
  Vec u(2);
  u << 10, 10;
  CHECK(lagrangian_block_gradient(qp, u, Vec::Zero(1), 0)[0] == doctest::Approx(10.0));
  Vec uh(2);
  uh << 0.5, 0.5;
  CHECK(lagrangian_block_gradient(qp, uh, Vec::Constant(1, 0.5), 0)[0] ==
        doctest::Approx(0.0));
  // lambda = 0, u = 0 -> q restricted to the block
  CoupledQP qp2 = qp;
  qp2.q << 3.0, -4.0;
  CHECK(lagrangian_block_gradient(qp2, Vec::Zero(2), Vec::Zero(1), 1)[0] ==
        doctest::Approx(-4.0));
  CHECK_THROWS_AS(lagrangian_block_gradient(qp, u, Vec::Zero(1), 5), std::out_of_range);
}

TEST_CASE("block gradients assemble to the full gradient") {
  std::mt19937_64 rng(42);
  const CoupledQP qp = harness::gen_random_qp(12, 7);
  for (int probe = 0; probe < 10; ++probe) {
    const Vec u = fixtures::random_box_point(qp.box, rng);
    const Vec lam = fixtures::random_nonneg(qp.p(), 2.0, rng);
    const Vec full = lagrangian_gradient(qp, u, lam);
    Vec assembled(qp.n());
    for (Index i = 0; i < qp.partition.count(); ++i)
      assembled.segment(qp.partition.offset(i), qp.partition.size(i)) =
          lagrangian_block_gradient(qp, u, lam, i);
    CHECK((assembled - full).cwiseAbs().maxCoeff() <= 1e-12);
  }
}

TEST_CASE("constants on P1") {
  const ProblemConstants c = constants(fixtures::p1());
  CHECK(c.sigma_F == doctest::Approx(1.0));
  CHECK(c.L_d_exact == doctest::Approx(2.0));
  CHECK(c.L_d_frobenius == doctest::Approx(2.0));
  CHECK(c.L_blocks[0] == doctest::Approx(1.0));
  CHECK(c.L_blocks[1] == doctest::Approx(1.0));
  CHECK(c.sigma_1 == doctest::Approx(1.0));
  CHECK(c.D_U == doctest::Approx(std::sqrt(800.0)));
  CHECK(c.diam_finite);
}

TEST_CASE("constants identities") {
  SUBCASE("identity coupling gives L_d = 1/c") {
    for (double cval : {0.5, 2.0, 7.5}) {
      CoupledQP qp;
      qp.H = cval * Mat::Identity(3, 3);
      qp.q = Vec::Zero(3);
      qp.G = Mat::Identity(3, 3);
      qp.g = Vec::Constant(3, -1.0);
      qp.box = Box::centered(3, 1.0);
      qp.partition = BlockPartition::uniform(3, 1);
      CHECK(constants(qp).L_d_exact == doctest::Approx(1.0 / cval));
    }
  }
  SUBCASE("random instances") {
    for (uint64_t seed : {1u, 2u, 3u}) {
      const CoupledQP qp = harness::gen_random_qp(9, seed);
      const ProblemConstants c = constants(qp);
      CHECK(c.L_d_exact <= c.L_d_frobenius * (1 + 1e-12));
      CHECK(c.sigma_1 > 0);
      CHECK(c.sigma_1 <= 1.0 + 1e-12);
      for (Index i = 0; i < c.block_count; ++i) CHECK(c.L_blocks[i] > 0);
      CHECK(c.sigma_F >= 1.0);  // H = H'H + I

      // global Lipschitz constant of the gradient is at most sum_i L_i
      std::mt19937_64 rng(seed);
      const double Lsum = c.L_blocks.sum();
      for (int probe = 0; probe < 8; ++probe) {
        const Vec u = fixtures::random_box_point(qp.box, rng);
        const Vec v = fixtures::random_box_point(qp.box, rng);
        const Vec lam = fixtures::random_nonneg(qp.p(), 1.0, rng);
        const double lhs =
            (lagrangian_gradient(qp, u, lam) - lagrangian_gradient(qp, v, lam)).norm();
        CHECK(lhs <= Lsum * (u - v).norm() * (1 + 1e-12));
      }
    }
  }
}

TEST_CASE("box projection") {
  const Box box = Box::centered(3, 1.0);
  Vec v(3);
  v << 2, -3, 0;
  Vec expected(3);
  expected << 1, -1, 0;
  CHECK(box_project(box, v) == expected);
  CHECK(box_project(box, box_project(box, v)) == box_project(box, v));

  std::mt19937_64 rng(3);
  std::normal_distribution<double> nd(0.0, 4.0);
  for (int probe = 0; probe < 20; ++probe) {
    Vec w(3);
    for (Index i = 0; i < 3; ++i) w[i] = nd(rng);
    const Vec pw = box_project(box, w);
    CHECK(box.contains(pw));
    CHECK(box_project(box, pw) == pw);
  }

  SUBCASE("interior point is untouched") {
    Vec inside(3);
    inside << 0.2, -0.7, 0.9;
    CHECK(box_project(box, inside) == inside);
  }
  SUBCASE("infinite bounds pass through") {
    Box free{Vec::Constant(2, -kInf), Vec::Constant(2, kInf)};
    Vec w(2);
    w << 1e9, -1e9;
    CHECK(box_project(free, w) == w);
    CHECK_FALSE(free.bounded());
    CHECK(free.diameter() == kInf);
  }
}

TEST_CASE("slater_dual_bound on P1") {
  const CoupledQP qp = fixtures::p1();
  const Vec u_tilde = Vec::Ones(2);
  const double R = slater_dual_bound(qp, u_tilde, Vec::Zero(1), 0.0);
  CHECK(R == doctest::Approx(1.0));
  CHECK(R >= fixtures::kP1LambdaStar);

  SUBCASE("zero slack rejected") {
    Vec ustar(2);
    ustar << 0.5, 0.5;  // active constraint
    CHECK_THROWS_AS(slater_dual_bound(qp, ustar, Vec::Zero(1), 0.0), std::invalid_argument);
  }
  SUBCASE("row scaling halves the bound") {
    CoupledQP scaled = qp;
    scaled.G *= 2.0;
    scaled.g *= 2.0;
    CHECK(slater_dual_bound(scaled, u_tilde, Vec::Zero(1), 0.0) == doctest::Approx(0.5));
  }
}

TEST_CASE("sparsity pattern limits the touched blocks") {
  // Chain of 3 blocks; H_02 = 0 and the pattern says so. Poison the entries
  // outside the declared pattern with NaN: the block gradient must not see them.
  CoupledQP qp;
  qp.H = Mat::Zero(3, 3);
  qp.H << 2, 0.5, 0, 0.5, 2, 0.5, 0, 0.5, 2;
  qp.q = Vec::Zero(3);
  qp.G = Mat::Zero(2, 3);
  qp.G << 1, 1, 0, 0, 1, 1;  // row block 0 couples {0,1}, row block 1 couples {1,2}
  qp.g = Vec::Constant(2, -1.0);
  qp.box = Box::centered(3, 1.0);
  qp.partition = BlockPartition::uniform(3, 1);
  SparsityPattern sp;
  sp.row_sizes = {1, 1};
  sp.hessian_neighbors = {{0, 1}, {0, 1, 2}, {1, 2}};
  sp.coupling_row_blocks = {{0}, {0, 1}, {1}};
  qp.sparsity = sp;

  const CoupledQP clean = qp;
  CoupledQP poisoned = qp;
  poisoned.H(0, 2) = poisoned.H(2, 0) = std::nan("");
  poisoned.G(0, 2) = std::nan("");
  poisoned.G(1, 0) = std::nan("");

  std::mt19937_64 rng(9);
  for (int probe = 0; probe < 5; ++probe) {
    const Vec u = fixtures::random_box_point(qp.box, rng);
    const Vec lam = fixtures::random_nonneg(2, 1.0, rng);
    for (Index i = 0; i < 3; ++i) {
      const Vec got = lagrangian_block_gradient(poisoned, u, lam, i);
      const Vec want = lagrangian_block_gradient(clean, u, lam, i);
      REQUIRE(got.allFinite());
      CHECK((got - want).cwiseAbs().maxCoeff() <= 1e-15);
    }
  }
}

TEST_CASE("problem JSON round trip") {
  std::mt19937_64 rng(5);
  CoupledQP qp = harness::gen_random_qp(6, 21);
  qp.box.ub[2] = kInf;  // exercise the null encoding
  qp.box.lb[4] = -kInf;
  const CoupledQP back = io::qp_from_json(io::to_json(qp));
  CHECK(back.H.isApprox(qp.H, 0));
  CHECK(back.q.isApprox(qp.q, 0));
  CHECK(back.G.isApprox(qp.G, 0));
  CHECK(back.g.isApprox(qp.g, 0));
  CHECK(back.box.lb == qp.box.lb);
  CHECK(back.box.ub == qp.box.ub);
  CHECK(back.partition.sizes() == qp.partition.sizes());

  const Vec probe = fixtures::random_box_point(fixtures::p1().box, rng);
  const CoupledQP p1_back = io::qp_from_json(io::to_json(fixtures::p1()));
  CHECK(objective(p1_back, probe) == objective(fixtures::p1(), probe));
}
