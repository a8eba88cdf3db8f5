#include "ddqp/dual.hpp"

#include <cmath>
#include <ostream>
#include <stdexcept>

namespace ddqp {

std::string method_name(Method m) {
  switch (m) {
    case Method::idg: return "idg";
    case Method::idfg: return "idfg";
    case Method::subgrad: return "subgrad";
  }
  return "?";
}

Method method_from_name(const std::string& name) {
  if (name == "idg") return Method::idg;
  if (name == "idfg") return Method::idfg;
  if (name == "subgrad") return Method::subgrad;
  throw std::invalid_argument("unknown method: " + name);
}

long idg_iterations(double L_d, double R_d, double eps_out) {
  if (L_d <= 0 || R_d <= 0 || eps_out <= 0)
    throw std::invalid_argument("idg_iterations: inputs must be > 0");
  return std::max<long>(1, static_cast<long>(std::floor(4.0 * L_d * R_d * R_d / eps_out)));
}

std::pair<long, double> idfg_iterations(double L_d, double R_d, double eps_out) {
  if (L_d <= 0 || R_d <= 0 || eps_out <= 0)
    throw std::invalid_argument("idfg_iterations: inputs must be > 0");
  const long k = std::max<long>(
      1, static_cast<long>(std::floor(2.0 * R_d * std::sqrt(L_d / eps_out))));
  const double eps_in = eps_out * std::sqrt(eps_out) / (2.0 * R_d * std::sqrt(L_d));
  return {k, eps_in};
}

CertificateSet certificates(Method method, long k, double eps_in, double L_used,
                            double R_d, double lambda0_norm) {
  if (k < 0 || eps_in < 0 || L_used < 0 || R_d < 0 || lambda0_norm < 0)
    throw std::invalid_argument("certificates: negative input");
  const double T = static_cast<double>(k) + 1.0;
  CertificateSet c;
  switch (method) {
    case Method::idg:
      c.dual_subopt_bound = L_used * R_d * R_d / T + eps_in;
      c.feas_violation_bound = 4.0 * L_used * R_d / T + 6.0 * L_used * lambda0_norm / T +
                               2.0 * std::sqrt(L_used * eps_in / T);
      c.primal_subopt_upper = L_used * lambda0_norm * lambda0_norm / T + eps_in;
      break;
    case Method::idfg:
      c.dual_subopt_bound = 4.0 * L_used * R_d * R_d / (T * T) + T * eps_in;
      c.feas_violation_bound = 16.0 * L_used * R_d / (T * T) +
                               8.0 * L_used * lambda0_norm / (T * T) +
                               4.0 * std::sqrt(L_used * eps_in / T);
      c.primal_subopt_upper = 4.0 * L_used * lambda0_norm * lambda0_norm / (T * T) + T * eps_in;
      break;
    case Method::subgrad:
      throw std::invalid_argument("certificates: no certificates for the subgradient baseline");
  }
  c.primal_subopt_lower = (R_d + lambda0_norm) * c.feas_violation_bound;
  return c;
}

namespace {

InnerSolution run_inner(const CoupledQP& qp, const ProblemConstants& c, const Vec& lambda,
                        const Vec& warm, const InnerSettings& s, const InnerOverride& ovr) {
  if (ovr) {
    auto [u, iters] = ovr(qp, lambda, warm);
    InnerSolution sol;
    sol.u_bar = std::move(u);
    sol.value = lagrangian(qp, sol.u_bar, lambda);
    sol.iterations = iters;
    sol.gap_bound = 0.0;
    sol.stop_reason = InnerStop::gap_certified;
    return sol;
  }
  return solve_inner(qp, lambda, warm, c, s);
}

struct LoopContext {
  const CoupledQP& qp;
  const OuterParams& params;
  ProblemConstants consts;
  InnerSettings inner;
  Vec lambda0;
  Vec warm;
  OuterTrace trace;
};

LoopContext make_context(const CoupledQP& qp, const OuterParams& params) {
  const ValidationReport rep = validate_problem(qp);
  if (!rep.ok()) throw std::invalid_argument("solve: invalid problem:\n" + rep.str());
  if (params.eps_out <= 0 || params.eps_in <= 0)
    throw std::invalid_argument("solve: accuracies must be > 0");
  if (params.k_out < 1) throw std::invalid_argument("solve: k_out must be >= 1");

  LoopContext ctx{qp, params, constants(qp), {}, {}, {}, {}};
  ctx.inner.eps_in = params.eps_in;
  ctx.inner.use_gap_stop = params.use_inner_gap_stop;
  ctx.inner.record_values = false;
  ctx.inner.threads = params.threads;
  if (!ctx.consts.diam_finite && !params.use_inner_gap_stop && !params.inner_override)
    throw std::invalid_argument("solve: unbounded box requires the inner gap stop");
  if (!ctx.consts.diam_finite) ctx.inner.budget = std::numeric_limits<long>::max() / 2;

  if (params.lambda0.size() == 0)
    ctx.lambda0 = Vec::Zero(qp.p());
  else if (params.lambda0.size() == qp.p() && params.lambda0.minCoeff() >= 0)
    ctx.lambda0 = params.lambda0;
  else
    throw std::invalid_argument("solve: lambda0 must be >= 0 with dim p");

  ctx.warm = box_project(qp.box, Vec::Zero(qp.n()));
  ctx.trace.iterations.reserve(static_cast<size_t>(std::min<long>(params.k_out, 1 << 20)));
  return ctx;
}

void record_iteration(LoopContext& ctx, const InnerSolution& inner, const Vec& grad,
                      const Vec& u_hat, const Vec& lambda_report, const Vec& lambda_next) {
  IterationRecord rec;
  rec.d_bar = inner.value;
  rec.grad_norm = grad.norm();
  rec.feas_violation = violation_norm(ctx.qp, u_hat);
  rec.primal_value = objective(ctx.qp, u_hat);
  rec.inner_iterations = inner.iterations;
  if (ctx.params.store_vectors) {
    rec.lambda = lambda_next;
    rec.lambda_hat = lambda_report;
    rec.u_bar = inner.u_bar;
    rec.u_hat = u_hat;
  }
  ctx.trace.iterations.push_back(std::move(rec));
}

}  // namespace

IdgStepResult idg_step(const CoupledQP& qp, const ProblemConstants& c,
                       const Vec& lambda_k, double alpha, const InnerSettings& s,
                       const Vec& warm) {
  if (lambda_k.size() != qp.p() || (qp.p() > 0 && lambda_k.minCoeff() < 0))
    throw std::invalid_argument("idg_step: lambda_k must be >= 0 with dim p");
  if (alpha < 0) throw std::invalid_argument("idg_step: alpha must be >= 0");
  InnerSolution inner = solve_inner(qp, lambda_k, warm, c, s);
  const Vec grad = constraints(qp, inner.u_bar);
  return {(lambda_k + alpha * grad).cwiseMax(0.0), std::move(inner)};
}

IdfgStepResult idfg_step(const CoupledQP& qp, const ProblemConstants& c,
                         const IdfgState& state, double L_d, const InnerSettings& s,
                         const Vec& warm) {
  if (state.lambda.size() != qp.p() || (qp.p() > 0 && state.lambda.minCoeff() < 0))
    throw std::invalid_argument("idfg_step: lambda must be >= 0 with dim p");
  if (L_d <= 0) throw std::invalid_argument("idfg_step: L_d must be > 0");
  InnerSolution inner = solve_inner(qp, state.lambda, warm, c, s);
  const Vec grad = constraints(qp, inner.u_bar);
  const double k = static_cast<double>(state.k);
  IdfgStepResult out;
  out.lambda_hat = (state.lambda + grad / (2.0 * L_d)).cwiseMax(0.0);
  out.z_next = state.z + ((k + 1.0) / 2.0) * grad / (2.0 * L_d);
  out.lambda_next =
      ((k + 1.0) / (k + 3.0)) * out.lambda_hat + (2.0 / (k + 3.0)) * out.z_next.cwiseMax(0.0);
  out.inner = std::move(inner);
  return out;
}

namespace {

SolveResult run_idg(LoopContext& ctx) {
  const auto& prm = ctx.params;
  const double L_used = prm.L_used > 0 ? prm.L_used : ctx.consts.L_d_exact;
  const double alpha = prm.alpha.value_or(1.0 / (2.0 * L_used));
  if (alpha > 1.0 / (2.0 * ctx.consts.L_d_exact) * (1 + 1e-12) ||
      alpha < 1.0 / (2.0 * L_used) * (1 - 1e-12))
    throw std::invalid_argument("solve: IDG step size outside [1/(2 L_used), 1/(2 L_d)]");

  Vec lambda = ctx.lambda0;
  double S = 0;
  Vec u_hat_acc = Vec::Zero(ctx.qp.n());
  Vec lam_hat_acc = Vec::Zero(ctx.qp.p());
  Vec u_hat, lam_hat;

  for (long k = 0; k < prm.k_out; ++k) {
    InnerSolution inner = run_inner(ctx.qp, ctx.consts, lambda, ctx.warm, ctx.inner, prm.inner_override);
    const Vec grad = constraints(ctx.qp, inner.u_bar);
    const Vec lambda_next = (lambda + alpha * grad).cwiseMax(0.0);

    S += alpha;
    u_hat_acc += alpha * inner.u_bar;
    lam_hat_acc += alpha * lambda_next;
    u_hat = u_hat_acc / S;
    lam_hat = lam_hat_acc / S;

    record_iteration(ctx, inner, grad, u_hat, lam_hat, lambda_next);
    ctx.trace.count = k + 1;
    if (prm.warm_start) ctx.warm = inner.u_bar;
    const Vec lambda_prev = lambda;
    lambda = lambda_next;

    if (prm.observer &&
        prm.observer({k, u_hat, lam_hat, inner.u_bar, lambda_prev, inner.value, inner.iterations})) {
      ctx.trace.stopped_early = true;
      break;
    }
  }
  ctx.trace.S_final = S;
  return {u_hat, lam_hat, std::move(ctx.trace)};
}

SolveResult run_idfg(LoopContext& ctx) {
  const auto& prm = ctx.params;
  const double L_d = prm.L_used > 0 ? prm.L_used : ctx.consts.L_d_exact;
  if (L_d < ctx.consts.L_d_exact * (1 - 1e-9))
    throw std::invalid_argument("solve: IDFG requires L_used >= L_d");

  IdfgState state{ctx.lambda0, ctx.lambda0, 0};
  Vec u_hat_acc = Vec::Zero(ctx.qp.n());
  Vec u_hat, lam_hat;

  for (long k = 0; k < prm.k_out; ++k) {
    InnerSolution inner =
        run_inner(ctx.qp, ctx.consts, state.lambda, ctx.warm, ctx.inner, prm.inner_override);
    const Vec grad = constraints(ctx.qp, inner.u_bar);
    const double kd = static_cast<double>(k);

    lam_hat = (state.lambda + grad / (2.0 * L_d)).cwiseMax(0.0);
    state.z += ((kd + 1.0) / 2.0) * grad / (2.0 * L_d);
    const Vec lambda_next =
        ((kd + 1.0) / (kd + 3.0)) * lam_hat + (2.0 / (kd + 3.0)) * state.z.cwiseMax(0.0);

    u_hat_acc += (kd + 1.0) * inner.u_bar;
    u_hat = 2.0 * u_hat_acc / ((kd + 1.0) * (kd + 2.0));

    record_iteration(ctx, inner, grad, u_hat, lam_hat, lambda_next);
    ctx.trace.count = k + 1;
    if (prm.warm_start) ctx.warm = inner.u_bar;

    const Vec lambda_prev = state.lambda;
    state.lambda = lambda_next;
    state.k = k + 1;

    if (prm.observer &&
        prm.observer({k, u_hat, lam_hat, inner.u_bar, lambda_prev, inner.value, inner.iterations})) {
      ctx.trace.stopped_early = true;
      break;
    }
  }
  return {u_hat, lam_hat, std::move(ctx.trace)};
}

}  // namespace

SolveResult solve(const CoupledQP& qp, const OuterParams& params) {
  LoopContext ctx = make_context(qp, params);
  switch (params.method) {
    case Method::idg: return run_idg(ctx);
    case Method::idfg: return run_idfg(ctx);
    case Method::subgrad: return subgradient_solve(qp, params);
  }
  throw std::invalid_argument("solve: unknown method");
}

SolveResult subgradient_solve(const CoupledQP& qp, const OuterParams& params) {
  LoopContext ctx = make_context(qp, params);
  const auto& prm = ctx.params;
  const double L_used = prm.L_used > 0 ? prm.L_used : ctx.consts.L_d_exact;
  const double gamma0 = prm.subgrad_gamma0 >= 0 ? prm.subgrad_gamma0 : 1.0 / L_used;

  Vec lambda = ctx.lambda0;
  double S = 0;
  Vec u_hat_acc = Vec::Zero(qp.n());
  Vec lam_hat_acc = Vec::Zero(qp.p());
  Vec u_hat, lam_hat;

  for (long k = 0; k < prm.k_out; ++k) {
    InnerSolution inner =
        run_inner(ctx.qp, ctx.consts, lambda, ctx.warm, ctx.inner, prm.inner_override);
    const Vec grad = constraints(qp, inner.u_bar);
    const double gamma_k = gamma0 / std::sqrt(static_cast<double>(k) + 1.0);
    const Vec lambda_next = (lambda + gamma_k * grad).cwiseMax(0.0);

    S += gamma_k;
    u_hat_acc += gamma_k * inner.u_bar;
    lam_hat_acc += gamma_k * lambda_next;
    if (S > 0) {
      u_hat = u_hat_acc / S;
      lam_hat = lam_hat_acc / S;
    } else {  // gamma0 == 0 freezes lambda; report the plain iterates
      u_hat = inner.u_bar;
      lam_hat = lambda_next;
    }

    record_iteration(ctx, inner, grad, u_hat, lam_hat, lambda_next);
    ctx.trace.count = k + 1;
    if (prm.warm_start) ctx.warm = inner.u_bar;
    const Vec lambda_prev = lambda;
    lambda = lambda_next;

    if (prm.observer &&
        prm.observer({k, u_hat, lam_hat, inner.u_bar, lambda_prev, inner.value, inner.iterations})) {
      ctx.trace.stopped_early = true;
      break;
    }
  }
  ctx.trace.S_final = S;
  return {u_hat, lam_hat, std::move(ctx.trace)};
}

void write_trace_csv(std::ostream& os, const OuterTrace& trace, Method method,
                     double eps_in, double L_used, double R_d, double lambda0_norm) {
  os << "k,d_bar,feas_violation,primal_value,dual_bound,feas_bound,primal_upper,"
        "primal_lower,inner_iters\n";
  os.precision(17);
  for (size_t i = 0; i < trace.iterations.size(); ++i) {
    const auto& r = trace.iterations[i];
    os << i << ',' << r.d_bar << ',' << r.feas_violation << ',' << r.primal_value << ',';
    if (method == Method::subgrad) {
      os << "nan,nan,nan,nan,";
    } else {
      const CertificateSet c =
          certificates(method, static_cast<long>(i), eps_in, L_used, R_d, lambda0_norm);
      os << c.dual_subopt_bound << ',' << c.feas_violation_bound << ','
         << c.primal_subopt_upper << ',' << c.primal_subopt_lower << ',';
    }
    os << r.inner_iterations << '\n';
  }
}

}  // namespace ddqp
