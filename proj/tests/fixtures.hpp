#pragma once

// Shared hand problems. P1 is the canonical two-variable instance with
// everything known in closed form:
//   H = I2, q = 0, G = [-1 -1], g = 1, box [-10,10]^2
//   u* = (0.5, 0.5), F* = 0.25, lambda* = 0.5, d(lambda) = lambda - lambda^2
// MPC-1 is the scalar integrator x+ = x + u with Q = R = 1, Riccati terminal
// weight P = (1+sqrt(5))/2 and K = -1/P, boxes |x| <= 1, |u| <= 1,
// X^f = [-0.5, 0.5].

#include "ddqp/harness.hpp"
#include "ddqp/model.hpp"
#include "ddqp/mpc.hpp"

#include <cmath>
#include <random>

namespace fixtures {

using namespace ddqp;

inline CoupledQP p1() {
  CoupledQP qp;
  qp.H = Mat::Identity(2, 2);
  qp.q = Vec::Zero(2);
  qp.G = Mat(1, 2);
  qp.G << -1, -1;
  qp.g = Vec::Constant(1, 1.0);
  qp.box = Box::centered(2, 10.0);
  qp.partition = BlockPartition::uniform(2, 1);
  return qp;
}

inline double p1_dual(double lambda) { return lambda - lambda * lambda; }

constexpr double kP1Fstar = 0.25;
constexpr double kP1LambdaStar = 0.5;

struct Mpc1 {
  mpc::NetworkSystem sys;
  mpc::TerminalIngredients terminal;
  long N = 3;
};

inline Mpc1 mpc1(long N = 3) {
  const double phi = 0.5 * (1.0 + std::sqrt(5.0));  // Riccati fixed point
  mpc::Subsystem s;
  s.nx = 1;
  s.nu = 1;
  s.A[0] = Mat::Constant(1, 1, 1.0);
  s.B[0] = Mat::Constant(1, 1, 1.0);
  s.Q = Mat::Identity(1, 1);
  s.R = Mat::Identity(1, 1);
  s.P = Mat::Constant(1, 1, phi);
  s.x_box = Box::centered(1, 1.0);
  s.u_box = Box::centered(1, 1.0);
  s.xf_box = Box::centered(1, 0.5);

  Mpc1 f;
  f.N = N;
  f.sys.mode = mpc::CouplingMode::input_coupled;
  f.sys.subsystems.push_back(s);
  f.sys.neighbors.push_back({0});
  f.terminal.K = Mat::Constant(1, 1, -1.0 / phi);
  f.terminal.P = {Mat::Constant(1, 1, phi)};
  f.terminal.xf = {Box::centered(1, 0.5)};
  return f;
}

/// Uniform random point in a bounded box.
inline Vec random_box_point(const Box& box, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  Vec v(box.dim());
  for (Index i = 0; i < box.dim(); ++i)
    v[i] = box.lb[i] + unif(rng) * (box.ub[i] - box.lb[i]);
  return v;
}

inline Vec random_nonneg(Index p, double scale, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> unif(0.0, scale);
  Vec v(p);
  for (Index i = 0; i < p; ++i) v[i] = unif(rng);
  return v;
}

}  // namespace fixtures
