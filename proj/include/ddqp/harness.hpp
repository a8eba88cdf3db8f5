#pragma once

#include "ddqp/dual.hpp"
#include "ddqp/model.hpp"
#include "ddqp/mpc.hpp"

#include <cstdint>
#include <iosfwd>

namespace ddqp::harness {

/// Random QP recipe: H, G (2n x n) standard normal, H <- H'H + I,
/// ub = -lb = 1, w uniform on [-1,1], g uniform then shifted so u = 0 is a
/// strict Slater point (g_j <- -|g_j| - 0.1). M = n blocks of size 1.
CoupledQP gen_random_qp(Index n, uint64_t seed);

struct TrafficInstance {
  mpc::NetworkSystem sys;  ///< terminal weights/boxes already installed
  mpc::TerminalIngredients terminal;
  std::vector<Vec> initial_states;
};

/// Ring of M junctions (M even >= 4): one queue state per junction, M/2
/// randomly placed controlled links releasing traffic downstream, M/2 exit
/// junctions draining at a fixed rate. Queue counts are normalized by 1e3.
TrafficInstance gen_ring_traffic(int M, long N, uint64_t seed, int n_initial = 10);

struct RandomQpRow {
  Index n = 0;
  uint64_t seed = 0;
  Method method = Method::idg;
  double eps_out = 0, eps_in = 0;
  double L_d = 0, R_samp = 0, R_bar = 0;
  long k_bound = 0, k_samp = 0, k_real = 0;
  double final_subopt = 0, final_violation = 0;
  double cpu_s = 0;
};

struct RandomQpStudyConfig {
  std::vector<Index> sizes = {10, 30};
  std::vector<uint64_t> seeds = {1, 2, 3, 4, 5};
  double eps_out = 1e-3;
  int threads = 1;
};

/// Per instance and method: a-priori iteration bounds with the Slater-based
/// R_bar and with the oracle multiplier norm, plus the observed iteration
/// count under the theorem-level stopping targets.
std::vector<RandomQpRow> run_random_qp_study(const RandomQpStudyConfig& cfg);

struct SensitivityRow {
  Index n = 0;
  uint64_t seed = 0;
  Method method = Method::idg;
  double eps_out = 0, eps_in = 0;
  bool rule_based = false;
  long k_out = 0;
  double subopt = 0;     ///< F(u_hat) - F*
  double violation = 0;  ///< ||[h(u_hat)]_+||
  bool target_met = false;
  double cpu_s = 0;
};

struct SensitivityConfig {
  Index n = 30;
  uint64_t seed = 11;
  double eps_out = 1e-3;
  /// swept inner accuracies; the method's rule-based value is appended
  std::vector<double> eps_in_grid = {1e-5, 1e-4, 1e-3, 1e-1, 1e1};
  int threads = 1;
};

/// Fixed-eps_out sweep over eps_in; inner solves are cold-started so the
/// delivered inner accuracy tracks the requested one.
std::vector<SensitivityRow> run_inner_sensitivity(const SensitivityConfig& cfg);

struct TrafficRow {
  int M = 0;
  uint64_t seed = 0;
  int state_index = 0;
  Method method = Method::idg;
  double eps_out = 0;
  long k_out = 0;  ///< a-priori budget (iteration cap for the baseline)
  long k_real = -1;
  double final_subopt = 0;
  double final_max_h = 0;  ///< max_j h_j at the final point; < 0 means strict
  bool feasible = false;
  double cpu_s = 0;
};

struct TrafficStudyConfig {
  std::vector<int> Ms = {4, 6};
  uint64_t seed = 5;
  long N = 5;
  int n_initial = 10;
  double eps_out = 1e-2;
  long subgrad_cap = 20000;
  int threads = 1;
};

/// One MPC time step per initial state: IDG/IDFG with the MPC parameter rule
/// against the capped dual-subgradient baseline.
std::vector<TrafficRow> run_traffic_study(const TrafficStudyConfig& cfg);

void write_random_qp_csv(std::ostream& os, const std::vector<RandomQpRow>& rows);
void write_sensitivity_csv(std::ostream& os, const std::vector<SensitivityRow>& rows);
void write_traffic_csv(std::ostream& os, const std::vector<TrafficRow>& rows);

}  // namespace ddqp::harness
