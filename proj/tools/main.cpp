// Command line front end: solve coupled QPs, run receding-horizon MPC,
// generate instances, run the desk-scale studies, and verify solutions.
//
// Exit codes: 0 success, 1 usage error, 2 numeric failure, 3 infeasible.

#include "ddqp/dual.hpp"
#include "ddqp/harness.hpp"
#include "ddqp/json_io.hpp"
#include "ddqp/model.hpp"
#include "ddqp/mpc.hpp"
#include "ddqp/oracle.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>

namespace {

using namespace ddqp;

struct CommonOpts {
  std::string method = "idfg";
  double eps_out = 1e-2;
  double eps_in = -1;  // <0: method rule
  uint64_t seed = 0;
  int threads = 1;
  std::string out;
};

int cmd_solve(const std::string& problem_path, const CommonOpts& o, const std::string& trace_path) {
  const CoupledQP qp = io::qp_from_json(io::read_file(problem_path));
  const ValidationReport rep = validate_problem(qp);
  if (!rep.ok()) {
    std::cerr << "invalid problem:\n" << rep.str();
    return 2;
  }
  const Method m = method_from_name(o.method);
  const ProblemConstants consts = constants(qp);

  const auto slater = oracle::slater_point(qp);
  if (!slater) {
    std::cerr << "no Slater point found; problem looks infeasible\n";
    return 3;
  }
  const auto [u0, d0] = oracle::exact_inner(qp, Vec::Zero(qp.p()), 1e-10);
  (void)u0;
  const double R_bar =
      std::max(1e-8, slater_dual_bound(qp, *slater, Vec::Zero(qp.p()), d0 - 1e-10));

  OuterParams op;
  op.method = m;
  op.eps_out = o.eps_out;
  op.threads = o.threads;
  if (m == Method::idg) {
    op.k_out = idg_iterations(consts.L_d_exact, R_bar, o.eps_out);
    op.eps_in = o.eps_out;
  } else if (m == Method::idfg) {
    std::tie(op.k_out, op.eps_in) = idfg_iterations(consts.L_d_exact, R_bar, o.eps_out);
  } else {
    op.k_out = 20000;
    op.eps_in = o.eps_out;
  }
  if (o.eps_in > 0) op.eps_in = o.eps_in;
  op.L_used = consts.L_d_exact;

  const SolveResult res = m == Method::subgrad ? subgradient_solve(qp, op) : solve(qp, op);

  io::SolutionFile sol;
  sol.u = res.u_hat;
  sol.lambda = res.lambda_hat;
  sol.objective = objective(qp, res.u_hat);
  sol.violation = violation_norm(qp, res.u_hat);
  sol.method = method_name(m);
  sol.eps_out = o.eps_out;
  sol.eps_in = op.eps_in;
  sol.k_out = op.k_out;
  const std::string text = io::to_json(sol);
  if (o.out.empty())
    std::cout << text << "\n";
  else
    io::write_file(o.out, text);

  if (!trace_path.empty()) {
    std::ofstream os(trace_path);
    write_trace_csv(os, res.trace, m, op.eps_in, consts.L_d_exact, R_bar, 0.0);
  }
  std::cerr << "k_out=" << op.k_out << " violation=" << sol.violation
            << " objective=" << sol.objective << "\n";
  return 0;
}

int cmd_mpc(const std::string& system_path, long horizon, int steps, const CommonOpts& o) {
  const mpc::NetworkSystem base = io::system_from_json(io::read_file(system_path));
  const mpc::TerminalIngredients term = mpc::default_terminal(base);
  const mpc::NetworkSystem sys = mpc::with_terminal(base, term);
  const mpc::CondensedMpc c = mpc::condense(sys, horizon);

  Vec x0 = Vec::Zero(c.nx);
  {
    // start from the mid-load point of the state box scaled into feasibility
    const Box X = sys.global_x_box();
    for (Index i = 0; i < c.nx; ++i)
      x0[i] = 0.5 * (std::max(X.lb[i], -1.0) + std::min(X.ub[i], 1.0));
    for (int shrink = 0; shrink < 12; ++shrink) {
      if (oracle::slater_point(mpc::instantiate(c, x0))) break;
      x0 *= 0.7;
    }
  }
  const auto slater0 = oracle::slater_point(mpc::instantiate(c, x0));
  if (!slater0) {
    std::cerr << "no feasible initial state found\n";
    return 3;
  }

  mpc::ClosedLoopOptions opt;
  opt.threads = o.threads;
  const auto trace = mpc::closed_loop(sys, horizon, x0, steps, method_from_name(o.method),
                                      o.eps_out, *slater0, term, opt);
  if (o.out.empty()) {
    mpc::write_closed_loop_csv(std::cout, trace);
  } else {
    std::ofstream os(o.out);
    mpc::write_closed_loop_csv(os, trace);
  }
  return 0;
}

int cmd_gen_random(Index n, const CommonOpts& o) {
  const CoupledQP qp = harness::gen_random_qp(n, o.seed);
  const std::string text = io::to_json(qp);
  if (o.out.empty())
    std::cout << text << "\n";
  else
    io::write_file(o.out, text);
  return 0;
}

int cmd_gen_traffic(int M, long horizon, const CommonOpts& o) {
  const harness::TrafficInstance inst = harness::gen_ring_traffic(M, horizon, o.seed);
  const std::string text = io::to_json(inst.sys);
  if (o.out.empty())
    std::cout << text << "\n";
  else
    io::write_file(o.out, text);
  return 0;
}

int cmd_study(const std::string& which, const std::string& out_dir, uint64_t seed,
              int threads, bool full) {
  namespace fs = std::filesystem;
  fs::create_directories(out_dir);
  if (which == "random-qp") {
    harness::RandomQpStudyConfig cfg;
    cfg.threads = threads;
    if (seed != 0) {
      cfg.seeds.clear();
      for (uint64_t s = seed; s < seed + 5; ++s) cfg.seeds.push_back(s);
    }
    if (full) cfg.sizes = {100, 300, 1000};
    const auto rows = harness::run_random_qp_study(cfg);
    std::ofstream os(fs::path(out_dir) / "random_qp.csv");
    harness::write_random_qp_csv(os, rows);
  } else if (which == "inner-sensitivity") {
    harness::SensitivityConfig cfg;
    cfg.threads = threads;
    if (seed != 0) cfg.seed = seed;
    if (full) cfg.n = 300;
    const auto rows = harness::run_inner_sensitivity(cfg);
    std::ofstream os(fs::path(out_dir) / "inner_sensitivity.csv");
    harness::write_sensitivity_csv(os, rows);
  } else if (which == "traffic") {
    harness::TrafficStudyConfig cfg;
    cfg.threads = threads;
    if (seed != 0) cfg.seed = seed;
    if (full) {
      cfg.Ms = {6, 12, 18};
      cfg.N = 10;
    }
    const auto rows = harness::run_traffic_study(cfg);
    std::ofstream os(fs::path(out_dir) / "traffic.csv");
    harness::write_traffic_csv(os, rows);
  } else {
    std::cerr << "unknown study: " << which << "\n";
    return 1;
  }
  return 0;
}

int cmd_verify(const std::string& problem_path, const std::string& solution_path) {
  const CoupledQP qp = io::qp_from_json(io::read_file(problem_path));
  const io::SolutionFile sol = io::solution_from_json(io::read_file(solution_path));
  const oracle::KktResidual res = oracle::kkt_residual(qp, sol.u, sol.lambda);
  std::cout << "stationarity    " << res.stationarity << "\n"
            << "primal          " << res.primal << "\n"
            << "dual            " << res.dual << "\n"
            << "complementarity " << res.complementarity << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"dual-decomposition solvers for coupled QPs with an MPC layer"};
  app.require_subcommand(1);

  CommonOpts o;
  std::string problem_path, system_path, solution_path, trace_path, study_name;
  std::string out_dir = "study_out";
  long horizon = 5;
  int steps = 20;
  Index gen_n = 10;
  int gen_M = 4;
  bool full = false;

  auto add_common = [&](CLI::App* cmd, bool with_method = true) {
    if (with_method)
      cmd->add_option("--method", o.method, "idg, idfg or subgrad")
          ->check(CLI::IsMember({"idg", "idfg", "subgrad"}));
    cmd->add_option("--eps-out", o.eps_out, "outer accuracy");
    cmd->add_option("--eps-in", o.eps_in, "inner accuracy override");
    cmd->add_option("--seed", o.seed, "RNG seed");
    cmd->add_option("--threads", o.threads, "inner-solver threads");
    cmd->add_option("--out", o.out, "output path");
  };

  auto* solve_cmd = app.add_subcommand("solve", "solve a problem JSON");
  solve_cmd->add_option("problem", problem_path, "problem JSON")->required();
  solve_cmd->add_option("--trace", trace_path, "write the outer trace CSV here");
  add_common(solve_cmd);

  auto* mpc_cmd = app.add_subcommand("mpc", "closed-loop MPC on a system JSON");
  mpc_cmd->add_option("--system", system_path, "system JSON")->required();
  mpc_cmd->add_option("--horizon", horizon, "prediction horizon");
  mpc_cmd->add_option("--steps", steps, "closed-loop steps");
  add_common(mpc_cmd);

  auto* gen_cmd = app.add_subcommand("gen", "generate instances");
  auto* gen_rqp = gen_cmd->add_subcommand("random-qp", "random coupled QP");
  gen_rqp->add_option("-n", gen_n, "dimension");
  add_common(gen_rqp, false);
  auto* gen_tr = gen_cmd->add_subcommand("traffic", "ring traffic network");
  gen_tr->add_option("-M", gen_M, "junction count (even)");
  gen_tr->add_option("--horizon", horizon, "prediction horizon");
  add_common(gen_tr, false);
  gen_cmd->require_subcommand(1);

  auto* study_cmd = app.add_subcommand("study", "run a desk-scale study");
  study_cmd->add_option("name", study_name, "random-qp, inner-sensitivity or traffic")
      ->required();
  study_cmd->add_option("--out", out_dir, "output directory");
  study_cmd->add_option("--seed", o.seed, "base seed");
  study_cmd->add_option("--threads", o.threads, "threads");
  study_cmd->add_flag("--full", full, "paper-scale sizes instead of desk scale");

  auto* verify_cmd = app.add_subcommand("verify", "KKT report for a solution JSON");
  verify_cmd->add_option("problem", problem_path, "problem JSON")->required();
  verify_cmd->add_option("solution", solution_path, "solution JSON")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 1;
  }

  try {
    if (solve_cmd->parsed()) return cmd_solve(problem_path, o, trace_path);
    if (mpc_cmd->parsed()) return cmd_mpc(system_path, horizon, steps, o);
    if (gen_cmd->parsed()) {
      if (gen_rqp->parsed()) return cmd_gen_random(gen_n, o);
      if (gen_tr->parsed()) return cmd_gen_traffic(gen_M, horizon, o);
      return 1;
    }
    if (study_cmd->parsed()) return cmd_study(study_name, out_dir, o.seed, o.threads, full);
    if (verify_cmd->parsed()) return cmd_verify(problem_path, solution_path);
  } catch (const ddqp::oracle::InfeasibleProblem& e) {
    std::cerr << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}
