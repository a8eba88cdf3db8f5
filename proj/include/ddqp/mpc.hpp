#pragma once

#include "ddqp/dual.hpp"
#include "ddqp/model.hpp"

#include <map>

namespace ddqp::mpc {

enum class CouplingMode { general, input_coupled };

struct Subsystem {
  Index nx = 0;
  Index nu = 0;  ///< may be 0 (no local decision variables)
  std::map<int, Mat> A;  ///< j -> A_ij; input_coupled mode allows only j == i
  std::map<int, Mat> B;  ///< j -> B_ij for neighbors j
  Mat Q, R, P;           ///< stage/input/terminal weights, positive definite
  Box x_box, u_box, xf_box;
};

struct NetworkSystem {
  CouplingMode mode = CouplingMode::input_coupled;
  std::vector<Subsystem> subsystems;
  std::vector<std::vector<int>> neighbors;  ///< N^i, includes i

  Index M() const { return static_cast<Index>(subsystems.size()); }
  Index total_nx() const;
  Index total_nu() const;
  std::vector<Index> x_offsets() const;
  std::vector<Index> u_offsets() const;

  Mat global_A() const;
  Mat global_B() const;
  Mat global_Q() const;
  Mat global_R() const;
  Mat global_P() const;
  Box global_x_box() const;
  Box global_u_box() const;
  Box global_xf_box() const;

  std::vector<std::string> validate() const;
};

/// The MPC problem with states eliminated: for an initial state x,
/// instantiate() yields the coupled QP with q = Wx + w and g_eff = Ex + g.
/// Decision variables are stacked subsystem-major: u = [u_1; ...; u_M],
/// u_i = [u_i(0); ...; u_i(N-1)].
struct CondensedMpc {
  long N = 0;
  Mat H, W, G, E;
  Vec w, g;
  Box box;
  BlockPartition partition;
  std::optional<SparsityPattern> sparsity;
  /// Eliminated-state cost constant: full cost = 1/2 u'Hu + (Wx+w)'u + x'offset x.
  Mat offset;

  Mat A, B;      ///< assembled global dynamics
  Mat Q_total;   ///< blkdiag(Q_i), the Lyapunov stage weight
  Mat Phi, Gamma;            ///< stage-major prediction matrices X = Phi x + Gamma u_sm
  std::vector<Index> perm;   ///< subsystem-major input index -> stage-major index
  Index nx = 0, nu = 0;
  std::vector<Index> u_offs;         ///< per-subsystem offsets into the global input
  std::vector<Index> input_blocks;   ///< subsystem -> partition block, -1 if no inputs
  ProblemConstants consts;           ///< x-independent constants of the condensed QP

  Index n() const { return H.rows(); }
  Index p() const { return G.rows(); }
};

CondensedMpc condense(const NetworkSystem& sys, long N);
CoupledQP instantiate(const CondensedMpc& c, const Vec& x);
/// 1/2 u'Hu + (Wx+w)'u + x'offset x; matches the stagewise MPC cost.
double full_cost(const CondensedMpc& c, const Vec& x, const Vec& u);
/// Stage-major stacked predicted states [x(1); ...; x(N)].
Vec predicted_states(const CondensedMpc& c, const Vec& x, const Vec& u_hat);
Vec first_input(const CondensedMpc& c, const Vec& u_hat);

/// Copy with g_eff shifted by +eps_c on every row.
CoupledQP tighten(const CoupledQP& qp, double eps_c);
/// Largest admissible tightening: half the minimum slack of u_tilde.
double eps_c_max(const CoupledQP& qp, const Vec& u_tilde);

double c_of_p(Method m, Index p);  ///< sqrt(p)+0.05 (IDG) or sqrt(p)+0.5 (IDFG)
double admissibility_cap(Method m, Index p, double R_d_bar, double min_slack);

struct MpcParams {
  long k_out = 0;
  double eps_in = 0;
  double eps_c = 0;
};
/// Outer-iteration / inner-accuracy / tightening triple for one MPC solve.
MpcParams mpc_params(Method m, double eps_out, double L_d, double R_d_bar,
                     Index p, double min_slack);

struct MpcStepRecord {
  Vec x;
  double eps_out = 0, eps_in = 0, eps_c = 0;
  long k_out = 0;   ///< a-priori budget
  long k_used = 0;  ///< outer iterations actually run
  double R_d_bar = 0;
  Vec u_hat;
  Vec applied;     ///< u_hat(0)
  Vec lambda_hat;  ///< dual candidate of the tightened solve
  double slack_min = 0;  ///< min_j -(G u_hat + E x + g)_j, untightened rows
  double F_value = 0;
  bool lyapunov_ok = true;
};

struct StepOptions {
  int threads = 1;
  OuterObserver observer;
};

/// Solves the tightened problem at state x with the method's parameter rule;
/// the returned input sequence is strictly feasible for the original rows.
MpcStepRecord solve_mpc_step(const CondensedMpc& c, const Vec& x, Method m,
                             double eps_out, const Vec& slater, double R_d_bar,
                             const StepOptions& opt = {});

/// [u_hat(1) ... u_hat(N-1), K x(N)]: the warm Slater candidate at the next state.
Vec shift_slater(const CondensedMpc& c, const Vec& u_hat, const Vec& x, const Mat& K);

/// eps_out^+ = max(eps_min, min(1/2 ||x||_Q^2, c_p * slack_plus)).
double next_accuracy(const Vec& x, const Mat& Q_total, double c_p,
                     double slack_plus, double eps_min = 1e-8);

/// (eps_c <lambda_hat, e> + 4 eps_out - ||x||_Q^2) / slack_plus, clamped below
/// at R_min; the numerator can go nonpositive near the origin.
double update_Rd(const Vec& lambda_hat, double eps_c, double eps_out,
                 double x_Q_sq, double slack_plus, double R_min = 1e-6);

struct TerminalIngredients {
  Mat K;               ///< global feedback u = Kx
  std::vector<Mat> P;  ///< per-subsystem terminal weights
  std::vector<Box> xf; ///< per-subsystem terminal boxes
};

/// Copy of sys with terminal weights and boxes replaced.
NetworkSystem with_terminal(NetworkSystem sys, const TerminalIngredients& t);

/// Per-subsystem Riccati feedback, Lyapunov terminal weights with margin, and
/// a scaled invariant box. Throws if the coupled closed loop resists.
TerminalIngredients default_terminal(const NetworkSystem& sys);

struct TerminalReport {
  std::vector<std::string> violations;
  bool ok() const { return violations.empty(); }
  std::string str() const;
};

/// Numeric check of the terminal ingredients: invariance of X^f under A+BK
/// (exact interval bounds plus random samples), the Lyapunov decrease LMI,
/// X^f inside the state box, and K X^f inside the input box.
TerminalReport check_terminal(const NetworkSystem& sys, const Mat& K, const Mat& P,
                              const Box& xf, int sample_count = 64);

struct ClosedLoopOptions {
  double eps_min = 1e-8;
  double R_min = 1e-6;
  int threads = 1;
  bool run_terminal_check = true;
};

/// Receding horizon: solve -> apply u(0) -> propagate -> shift the Slater
/// vector -> update eps_out and R_d. Throws with the step index if the
/// shifted Slater vector loses strict feasibility.
std::vector<MpcStepRecord> closed_loop(const NetworkSystem& sys, long N, const Vec& x0,
                                       int steps, Method m, double eps_out0,
                                       const Vec& slater0, const TerminalIngredients& term,
                                       const ClosedLoopOptions& opt = {});

/// ClosedLoopTrace CSV: t, x_norm, F, eps_out, eps_c, k_out, slack_min, lyapunov_ok.
void write_closed_loop_csv(std::ostream& os, const std::vector<MpcStepRecord>& steps);

}  // namespace ddqp::mpc
