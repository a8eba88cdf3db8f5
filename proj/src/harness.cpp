#include "ddqp/harness.hpp"

#include "ddqp/oracle.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <ostream>
#include <random>
#include <stdexcept>

namespace ddqp::harness {

namespace {

double seconds_since(const std::chrono::steady_clock::time_point& t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// Slater-based multiplier bound with lambda_tilde = 0; the dual value at 0 is
// replaced by a certified lower bound so the result stays a valid upper bound.
double slater_R_bar(const CoupledQP& qp, const Vec& u_tilde) {
  const double tol = 1e-10;
  const auto [u0, d0] = oracle::exact_inner(qp, Vec::Zero(qp.p()), tol);
  (void)u0;
  return slater_dual_bound(qp, u_tilde, Vec::Zero(qp.p()), d0 - tol);
}

}  // namespace

CoupledQP gen_random_qp(Index n, uint64_t seed) {
  if (n < 2) throw std::invalid_argument("gen_random_qp: n must be >= 2");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unif(-1.0, 1.0);

  Mat H0(n, n);
  for (Index i = 0; i < n; ++i)
    for (Index j = 0; j < n; ++j) H0(i, j) = normal(rng);
  Mat G(2 * n, n);
  for (Index i = 0; i < 2 * n; ++i)
    for (Index j = 0; j < n; ++j) G(i, j) = normal(rng);

  CoupledQP qp;
  qp.H = H0.transpose() * H0 + Mat::Identity(n, n);
  qp.q = Vec(n);
  for (Index i = 0; i < n; ++i) qp.q[i] = unif(rng);
  qp.G = G;
  qp.g = Vec(2 * n);
  for (Index i = 0; i < 2 * n; ++i) qp.g[i] = -std::abs(unif(rng)) - 0.1;
  qp.box = Box::centered(n, 1.0);
  qp.partition = BlockPartition::uniform(n, 1);
  return qp;
}

TrafficInstance gen_ring_traffic(int M, long N, uint64_t seed, int n_initial) {
  if (M < 4 || M % 2 != 0) throw std::invalid_argument("gen_ring_traffic: M must be even, >= 4");
  std::mt19937_64 rng(seed);

  // M/2 controlled links placed at random around the ring.
  std::vector<int> order(static_cast<size_t>(M));
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<bool> controlled(static_cast<size_t>(M), false);
  for (int k = 0; k < M / 2; ++k) controlled[static_cast<size_t>(order[static_cast<size_t>(k)])] = true;

  // Documented flow defaults (normalized units): exit drain rate, transfer
  // efficiency of a controlled link, queue capacity 800 vehicles / 1e3.
  const double drain = 0.6;
  const double beta = 0.4;
  const double cap = 800.0 / 1000.0;

  mpc::NetworkSystem sys;
  sys.mode = mpc::CouplingMode::input_coupled;
  for (int i = 0; i < M; ++i) {
    mpc::Subsystem s;
    s.nx = 1;
    s.nu = controlled[static_cast<size_t>(i)] ? 1 : 0;
    s.A[i] = Mat::Constant(1, 1, controlled[static_cast<size_t>(i)] ? 1.0 : drain);
    if (s.nu == 1) s.B[i] = Mat::Constant(1, 1, -1.0);
    const int up = (i + M - 1) % M;
    if (controlled[static_cast<size_t>(up)]) s.B[up] = Mat::Constant(1, 1, beta);
    s.Q = Mat::Identity(1, 1);
    s.R = s.nu == 1 ? Mat::Identity(1, 1) : Mat(0, 0);
    s.P = Mat::Identity(1, 1);  // replaced by the terminal synthesis below
    s.x_box = Box{Vec::Constant(1, -0.25 * cap), Vec::Constant(1, cap)};
    s.u_box = s.nu == 1 ? Box{Vec::Constant(1, -0.4), Vec::Constant(1, 0.4)} : Box{Vec(0), Vec(0)};
    s.xf_box = s.x_box;  // replaced below
    sys.subsystems.push_back(std::move(s));
    sys.neighbors.push_back({(i + M - 1) % M, i, (i + 1) % M});
  }

  TrafficInstance inst;
  inst.terminal = mpc::default_terminal(sys);
  inst.sys = mpc::with_terminal(sys, inst.terminal);

  const mpc::CondensedMpc c = mpc::condense(inst.sys, N);
  std::uniform_real_distribution<double> load(0.3, 0.7);
  for (int k = 0; k < n_initial; ++k) {
    Vec x0(M);
    for (int i = 0; i < M; ++i) x0[i] = load(rng) * cap;
    // validated by a feasibility solve; scale down until a Slater point exists
    for (int shrink = 0; shrink < 8; ++shrink) {
      const CoupledQP qp = mpc::instantiate(c, x0);
      if (oracle::slater_point(qp)) break;
      x0 *= 0.8;
    }
    inst.initial_states.push_back(x0);
  }
  return inst;
}

std::vector<RandomQpRow> run_random_qp_study(const RandomQpStudyConfig& cfg) {
  std::vector<RandomQpRow> rows;
  for (Index n : cfg.sizes) {
    for (uint64_t seed : cfg.seeds) {
      const CoupledQP qp = gen_random_qp(n, seed);
      const ProblemConstants consts = constants(qp);
      const oracle::ReferenceSolution ref = oracle::reference_solve(qp, 1e-9);
      const double R_samp = std::max(ref.lambda_star.norm(), 1e-12);
      const double R_bar = slater_R_bar(qp, Vec::Zero(qp.n()));

      for (Method m : {Method::idg, Method::idfg}) {
        const auto t0 = std::chrono::steady_clock::now();
        RandomQpRow row;
        row.n = n;
        row.seed = seed;
        row.method = m;
        row.eps_out = cfg.eps_out;
        row.L_d = consts.L_d_exact;
        row.R_samp = R_samp;
        row.R_bar = R_bar;

        double eps_in;
        if (m == Method::idg) {
          row.k_bound = idg_iterations(consts.L_d_exact, R_bar, cfg.eps_out);
          row.k_samp = idg_iterations(consts.L_d_exact, R_samp, cfg.eps_out);
          eps_in = cfg.eps_out;
        } else {
          auto [kb, ei] = idfg_iterations(consts.L_d_exact, R_bar, cfg.eps_out);
          row.k_bound = kb;
          row.k_samp = idfg_iterations(consts.L_d_exact, R_samp, cfg.eps_out).first;
          eps_in = ei;
        }
        row.eps_in = eps_in;

        // Theorem-level stopping targets, measured with the oracle optimum.
        const double viol_target =
            (m == Method::idg ? 2.0 : 6.0) * cfg.eps_out / R_samp;
        const double sub_hi = (m == Method::idg ? 1.0 : 2.0) * cfg.eps_out;
        const double sub_lo = (m == Method::idg ? -2.0 : -6.0) * cfg.eps_out;

        OuterParams op;
        op.method = m;
        op.eps_out = cfg.eps_out;
        op.eps_in = eps_in;
        op.k_out = row.k_bound;
        op.threads = cfg.threads;
        op.observer = [&](const IterationView& v) {
          const double sub = objective(qp, v.u_hat) - ref.F_star;
          const double viol = violation_norm(qp, v.u_hat);
          return viol <= viol_target && sub <= sub_hi && sub >= sub_lo;
        };
        const SolveResult res = solve(qp, op);
        row.k_real = res.trace.count;
        row.final_subopt = objective(qp, res.u_hat) - ref.F_star;
        row.final_violation = violation_norm(qp, res.u_hat);
        row.cpu_s = seconds_since(t0);
        rows.push_back(row);
      }
    }
  }
  return rows;
}

std::vector<SensitivityRow> run_inner_sensitivity(const SensitivityConfig& cfg) {
  const CoupledQP qp = gen_random_qp(cfg.n, cfg.seed);
  const ProblemConstants consts = constants(qp);
  const oracle::ReferenceSolution ref = oracle::reference_solve(qp, 1e-9);
  const double R = std::max(ref.lambda_star.norm(), 1e-12);

  std::vector<SensitivityRow> rows;
  for (Method m : {Method::idg, Method::idfg}) {
    long k_out;
    double eps_rule;
    if (m == Method::idg) {
      k_out = idg_iterations(consts.L_d_exact, R, cfg.eps_out);
      eps_rule = cfg.eps_out;
    } else {
      std::tie(k_out, eps_rule) = idfg_iterations(consts.L_d_exact, R, cfg.eps_out);
    }
    std::vector<double> grid = cfg.eps_in_grid;
    grid.push_back(eps_rule);
    std::sort(grid.begin(), grid.end());

    for (double eps_in : grid) {
      const auto t0 = std::chrono::steady_clock::now();
      OuterParams op;
      op.method = m;
      op.eps_out = cfg.eps_out;
      op.eps_in = eps_in;
      op.k_out = k_out;
      op.threads = cfg.threads;
      op.warm_start = false;  // delivered inner accuracy must track eps_in
      const SolveResult res = solve(qp, op);

      SensitivityRow row;
      row.n = cfg.n;
      row.seed = cfg.seed;
      row.method = m;
      row.eps_out = cfg.eps_out;
      row.eps_in = eps_in;
      row.rule_based = eps_in == eps_rule;
      row.k_out = k_out;
      row.subopt = objective(qp, res.u_hat) - ref.F_star;
      row.violation = violation_norm(qp, res.u_hat);
      const double lo = (m == Method::idg ? -2.0 : -6.0) * cfg.eps_out;
      const double hi = (m == Method::idg ? 1.0 : 2.0) * cfg.eps_out;
      row.target_met = row.subopt >= lo && row.subopt <= hi;
      row.cpu_s = seconds_since(t0);
      rows.push_back(row);
    }
  }
  return rows;
}

std::vector<TrafficRow> run_traffic_study(const TrafficStudyConfig& cfg) {
  std::vector<TrafficRow> rows;
  for (int M : cfg.Ms) {
    const uint64_t seed = cfg.seed + static_cast<uint64_t>(1000 * M);
    const TrafficInstance inst = gen_ring_traffic(M, cfg.N, seed, cfg.n_initial);
    const mpc::CondensedMpc c = mpc::condense(inst.sys, cfg.N);

    for (int si = 0; si < static_cast<int>(inst.initial_states.size()); ++si) {
      const Vec& x0 = inst.initial_states[static_cast<size_t>(si)];
      const CoupledQP qp = mpc::instantiate(c, x0);
      const auto slater = oracle::slater_point(qp);
      if (!slater) continue;  // generator validates; defensive skip
      const double slack = -constraints(qp, *slater).maxCoeff();
      const double R_bar = slater_R_bar(qp, *slater);
      const oracle::ReferenceSolution ref = oracle::reference_solve(qp, 1e-9);

      for (Method m : {Method::idg, Method::idfg}) {
        const auto t0 = std::chrono::steady_clock::now();
        const double cap = mpc::admissibility_cap(m, qp.p(), R_bar, slack);
        const double eps_out = std::min(cfg.eps_out, 0.99 * cap);
        const mpc::MpcParams prm =
            mpc::mpc_params(m, eps_out, c.consts.L_d_exact, R_bar, qp.p(), slack);
        const CoupledQP qp_t = mpc::tighten(qp, prm.eps_c);

        TrafficRow row;
        row.M = M;
        row.seed = seed;
        row.state_index = si;
        row.method = m;
        row.eps_out = eps_out;
        row.k_out = prm.k_out;

        long k_real = -1;
        OuterParams op;
        op.method = m;
        op.eps_out = eps_out;
        op.eps_in = prm.eps_in;
        op.k_out = prm.k_out;
        op.threads = cfg.threads;
        op.observer = [&](const IterationView& v) {
          if (k_real < 0) {
            const double sub = objective(qp, v.u_hat) - ref.F_star;
            if (sub <= eps_out && constraints(qp, v.u_hat).maxCoeff() <= 0) k_real = v.k + 1;
          }
          return false;  // run the full a-priori budget
        };
        const SolveResult res = solve(qp_t, op);
        row.k_real = k_real;
        row.final_subopt = objective(qp, res.u_hat) - ref.F_star;
        row.final_max_h = constraints(qp, res.u_hat).maxCoeff();
        row.feasible = row.final_max_h < 0;
        row.cpu_s = seconds_since(t0);
        rows.push_back(row);
      }

      {  // capped dual-subgradient baseline on the same tightened problem
        const auto t0 = std::chrono::steady_clock::now();
        const mpc::MpcParams prm = mpc::mpc_params(
            Method::idg, std::min(cfg.eps_out, 0.99 * mpc::admissibility_cap(
                                                         Method::idg, qp.p(), R_bar, slack)),
            c.consts.L_d_exact, R_bar, qp.p(), slack);
        const CoupledQP qp_t = mpc::tighten(qp, prm.eps_c);

        TrafficRow row;
        row.M = M;
        row.seed = seed;
        row.state_index = si;
        row.method = Method::subgrad;
        row.eps_out = cfg.eps_out;
        row.k_out = cfg.subgrad_cap;

        bool ever_feasible = false;
        long first_feasible = -1;
        OuterParams op;
        op.method = Method::subgrad;
        op.eps_out = cfg.eps_out;
        op.eps_in = prm.eps_in;
        op.k_out = cfg.subgrad_cap;
        op.threads = cfg.threads;
        op.observer = [&](const IterationView& v) {
          if (!ever_feasible && constraints(qp, v.u_hat).maxCoeff() < 0) {
            ever_feasible = true;
            first_feasible = v.k + 1;
          }
          return false;
        };
        const SolveResult res = subgradient_solve(qp_t, op);
        row.k_real = first_feasible;
        row.final_subopt = objective(qp, res.u_hat) - ref.F_star;
        row.final_max_h = constraints(qp, res.u_hat).maxCoeff();
        row.feasible = ever_feasible;
        row.cpu_s = seconds_since(t0);
        rows.push_back(row);
      }
    }
  }
  return rows;
}

void write_random_qp_csv(std::ostream& os, const std::vector<RandomQpRow>& rows) {
  os << "n,seed,method,eps_out,eps_in,L_d,R_samp,R_bar,k_bound,k_samp,k_real,"
        "final_subopt,final_violation,cpu_s\n";
  os.precision(17);
  for (const auto& r : rows) {
    os << r.n << ',' << r.seed << ',' << method_name(r.method) << ',' << r.eps_out << ','
       << r.eps_in << ',' << r.L_d << ',' << r.R_samp << ',' << r.R_bar << ',' << r.k_bound
       << ',' << r.k_samp << ',' << r.k_real << ',' << r.final_subopt << ','
       << r.final_violation << ',' << r.cpu_s << '\n';
  }
}

void write_sensitivity_csv(std::ostream& os, const std::vector<SensitivityRow>& rows) {
  os << "n,seed,method,eps_out,eps_in,rule_based,k_out,subopt,violation,target_met,cpu_s\n";
  os.precision(17);
  for (const auto& r : rows) {
    os << r.n << ',' << r.seed << ',' << method_name(r.method) << ',' << r.eps_out << ','
       << r.eps_in << ',' << (r.rule_based ? 1 : 0) << ',' << r.k_out << ',' << r.subopt
       << ',' << r.violation << ',' << (r.target_met ? 1 : 0) << ',' << r.cpu_s << '\n';
  }
}

void write_traffic_csv(std::ostream& os, const std::vector<TrafficRow>& rows) {
  os << "M,seed,state_index,method,eps_out,k_out,k_real,final_subopt,final_max_h,"
        "feasible,cpu_s\n";
  os.precision(17);
  for (const auto& r : rows) {
    os << r.M << ',' << r.seed << ',' << r.state_index << ',' << method_name(r.method) << ','
       << r.eps_out << ',' << r.k_out << ',' << r.k_real << ',' << r.final_subopt << ','
       << r.final_max_h << ',' << (r.feasible ? 1 : 0) << ',' << r.cpu_s << '\n';
  }
}

}  // namespace ddqp::harness
