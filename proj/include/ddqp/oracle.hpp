#pragma once

#include "ddqp/model.hpp"

#include <stdexcept>
#include <utility>

namespace ddqp::oracle {

/// Thrown when the coupling rows are inconsistent with the box.
struct InfeasibleProblem : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct KktResidual {
  double stationarity = 0;
  double primal = 0;
  double dual = 0;
  double complementarity = 0;
  double max() const;
};

struct ReferenceSolution {
  Vec u_star;
  Vec lambda_star;
  double F_star = 0;
  KktResidual kkt;
};

/// KKT residual bundle at (u, lambda): stationarity is the distance of
/// -(Hu + q + G'lambda) to the normal cone of the box at u; primal folds
/// coupling and box violation; complementarity is sum_j |lambda_j h_j(u)|.
KktResidual kkt_residual(const CoupledQP& qp, const Vec& u, const Vec& lambda);

/// Ground-truth solve: long-horizon exact-inner dual fast gradient followed
/// by active-set polishing of the KKT system. Not fast, not general; the
/// independent reference every bound-holds test compares against.
ReferenceSolution reference_solve(const CoupledQP& qp, double tol = 1e-10);

/// Inner problem u(lambda) = argmin_{u in box} L(u, lambda), solved to a
/// certified gap <= tol by over-relaxed projected gradient.
/// Returns (u(lambda), d(lambda)). `warm` seeds the iteration when given.
std::pair<Vec, double> exact_inner(const CoupledQP& qp, const Vec& lambda,
                                   double tol, const Vec* warm = nullptr);

/// Minimizes ||[Gu + g + margin e]_+|| over the box; returns a point with
/// h(u) <= -margin componentwise if one is found.
std::optional<Vec> feasible_point(const CoupledQP& qp, double margin);

/// Strict Slater vector search over a decreasing margin schedule.
std::optional<Vec> slater_point(const CoupledQP& qp);

}  // namespace ddqp::oracle
