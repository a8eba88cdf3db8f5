#pragma once

#include "ddqp/model.hpp"

namespace ddqp {

enum class InnerStop { iteration_budget, gap_certified };

struct InnerSolution {
  Vec u_bar;
  double value = 0;  ///< L(u_bar, lambda)
  long iterations = 0;
  double gap_bound = 0;  ///< certified upper bound on L(u_bar) - L*
  InnerStop stop_reason = InnerStop::iteration_budget;
  std::vector<double> value_trace;  ///< L at l = 0..iterations
};

/// Open-loop inner iteration count
///   l_in = floor( (M L_max / sigma) ln( 3 L_max D_U^2 / eps_in ) ),
/// clamped below at 1. Requires a bounded box.
long inner_iteration_count(const ProblemConstants& c, double eps_in);

/// One Jacobi-snapshot step: every block i moves to
///   (1/M) [u_i - (1/L_i) grad_i]_box + ((M-1)/M) u_i,
/// all blocks reading the same input snapshot.
Vec pcd_step(const CoupledQP& qp, const Vec& lambda, const Vec& u,
             const ProblemConstants& c, int threads = 1);

/// Certified gap bound at u via the step-1/L_glob gradient mapping.
double inner_gap_bound(const CoupledQP& qp, const Vec& lambda, const Vec& u,
                       const ProblemConstants& c);

struct InnerSettings {
  double eps_in = 1e-6;
  std::optional<long> budget;  ///< default: inner_iteration_count(eps_in)
  bool use_gap_stop = true;    ///< stop once the certified gap <= eps_in / 3
  bool record_values = true;
  int threads = 1;
};

InnerSolution solve_inner(const CoupledQP& qp, const Vec& lambda, const Vec& u0,
                          const ProblemConstants& c, const InnerSettings& s);

}  // namespace ddqp
