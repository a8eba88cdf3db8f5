#pragma once

#include "ddqp/model.hpp"
#include "ddqp/pcd.hpp"

#include <functional>
#include <iosfwd>

namespace ddqp {

enum class Method { idg, idfg, subgrad };

std::string method_name(Method m);
Method method_from_name(const std::string& name);

/// A-priori iteration count for (IDG): k_out = floor(4 L_d R_d^2 / eps_out),
/// paired with eps_in = eps_out.
long idg_iterations(double L_d, double R_d, double eps_out);

/// A-priori pair for (IDFG):
///   k_out = floor(2 R_d sqrt(L_d / eps_out)),
///   eps_in = eps_out^{3/2} / (2 R_d sqrt(L_d)).
std::pair<long, double> idfg_iterations(double L_d, double R_d, double eps_out);

/// Theoretical envelopes at outer iteration k (0-based; k+1 inner solves done).
struct CertificateSet {
  double dual_subopt_bound = 0;     ///< bound on F* - d(lambda_hat^k)
  double feas_violation_bound = 0;  ///< v(k, eps_in), bound on ||[h(u_hat^k)]_+||
  double primal_subopt_upper = 0;   ///< bound on F(u_hat^k) - F*
  double primal_subopt_lower = 0;   ///< magnitude: F(u_hat^k) - F* >= -this
};

CertificateSet certificates(Method method, long k, double eps_in, double L_used,
                            double R_d, double lambda0_norm);

/// Per-iteration view passed to observers. Vectors refer to solver state and
/// are only valid during the call.
struct IterationView {
  long k = 0;
  const Vec& u_hat;          ///< averaged primal point at k
  const Vec& lambda_report;  ///< dual candidate at k (average for IDG, hat point for IDFG)
  const Vec& u_bar;          ///< inner solution at lambda_k
  const Vec& lambda_k;
  double d_bar = 0;  ///< L(u_bar, lambda_k)
  long inner_iterations = 0;
};

/// Return true to stop before k_out is exhausted (test/bench only).
using OuterObserver = std::function<bool(const IterationView&)>;

/// Replaces the PCD inner solver; returns (u_bar, iterations). Used by tests
/// that need exact inner solutions.
using InnerOverride =
    std::function<std::pair<Vec, long>(const CoupledQP&, const Vec& lambda, const Vec& warm)>;

struct OuterParams {
  Method method = Method::idg;
  double eps_out = 1e-2;
  double eps_in = 1e-2;
  long k_out = 1;
  /// L_bar >= L_d for IDG step sizes, L_d itself for IDFG; <= 0 means
  /// "compute L_d_exact from the problem".
  double L_used = 0;
  Vec lambda0;  ///< empty means zeros(p)
  /// IDG step size, in [1/(2 L_used), 1/(2 L_d)]; default 1/(2 L_used).
  std::optional<double> alpha;
  /// Subgradient step scale gamma_k = gamma0 / sqrt(k+1); negative means the
  /// default 1 / L_used, zero freezes lambda at lambda0.
  double subgrad_gamma0 = -1;
  bool warm_start = true;
  bool use_inner_gap_stop = true;
  int threads = 1;
  bool store_vectors = false;
  OuterObserver observer;
  InnerOverride inner_override;
};

struct IterationRecord {
  double d_bar = 0;
  double grad_norm = 0;        ///< ||approximate dual gradient||
  double feas_violation = 0;   ///< ||[h(u_hat^k)]_+||
  double primal_value = 0;     ///< F(u_hat^k)
  long inner_iterations = 0;
  // populated only when store_vectors is set
  Vec lambda;      ///< lambda^{k+1}
  Vec lambda_hat;  ///< dual candidate at k
  Vec u_bar;
  Vec u_hat;
};

struct OuterTrace {
  std::vector<IterationRecord> iterations;
  long count = 0;  ///< outer iterations actually run
  bool stopped_early = false;
  double S_final = 0;  ///< sum of averaging weights (IDG / subgradient)
};

struct SolveResult {
  Vec u_hat;
  Vec lambda_hat;
  OuterTrace trace;
};

/// One (IDG) update at lambda_k.
struct IdgStepResult {
  Vec lambda_next;
  InnerSolution inner;
};
IdgStepResult idg_step(const CoupledQP& qp, const ProblemConstants& c,
                       const Vec& lambda_k, double alpha, const InnerSettings& s,
                       const Vec& warm);

/// One (IDFG) update from state (lambda_k, z_k, k); z accumulates the
/// weighted gradient sum lambda0 + (1/2L) sum_s ((s+1)/2) grad_s.
struct IdfgState {
  Vec lambda;
  Vec z;
  long k = 0;
};
struct IdfgStepResult {
  Vec lambda_hat;
  Vec lambda_next;
  Vec z_next;
  InnerSolution inner;
};
IdfgStepResult idfg_step(const CoupledQP& qp, const ProblemConstants& c,
                         const IdfgState& state, double L_d, const InnerSettings& s,
                         const Vec& warm);

/// Runs k_out outer iterations of params.method (IDG or IDFG), maintaining
/// the averaged primal/dual sequences; returns the averaged primal point and
/// the method's dual candidate.
SolveResult solve(const CoupledQP& qp, const OuterParams& params);

/// Projected dual subgradient baseline with diminishing steps; comparison
/// only, no certificates apply.
SolveResult subgradient_solve(const CoupledQP& qp, const OuterParams& params);

/// CSV trace export: k, d_bar, feas_violation, primal_value, dual_bound,
/// feas_bound, primal_upper, primal_lower, inner_iters. Bound columns are
/// blank (nan) for the subgradient baseline.
void write_trace_csv(std::ostream& os, const OuterTrace& trace, Method method,
                     double eps_in, double L_used, double R_d, double lambda0_norm);

}  // namespace ddqp
