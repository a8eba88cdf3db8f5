#include "ddqp/pcd.hpp"

#include <cmath>
#include <functional>
#include <stdexcept>
#include <thread>

namespace ddqp {

namespace {

void parallel_blocks(Index count, int threads, const std::function<void(Index)>& body) {
  if (threads <= 1 || count <= 1) {
    for (Index i = 0; i < count; ++i) body(i);
    return;
  }
  const int workers = static_cast<int>(std::min<Index>(threads, count));
  std::vector<std::thread> pool;
  pool.reserve(static_cast<size_t>(workers));
  for (int w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      for (Index i = w; i < count; i += workers) body(i);
    });
  }
  for (auto& t : pool) t.join();
}

}  // namespace

long inner_iteration_count(const ProblemConstants& c, double eps_in) {
  if (eps_in <= 0) throw std::invalid_argument("inner_iteration_count: eps_in must be > 0");
  if (!c.diam_finite)
    throw std::invalid_argument(
        "inner_iteration_count: unbounded box; use the gap-certified stop");
  const double M = static_cast<double>(c.block_count);
  const double l =
      (M * c.L_max / c.sigma_F) * std::log(3.0 * c.L_max * c.D_U * c.D_U / eps_in);
  return std::max<long>(1, static_cast<long>(std::floor(l)));
}

Vec pcd_step(const CoupledQP& qp, const Vec& lambda, const Vec& u,
             const ProblemConstants& c, int threads) {
  if (!qp.box.contains(u, 1e-12)) throw std::invalid_argument("pcd_step: u outside box");
  const auto& part = qp.partition;
  const double M = static_cast<double>(part.count());
  Vec out(u.size());
  parallel_blocks(part.count(), threads, [&](Index i) {
    const Index off = part.offset(i);
    const Index ni = part.size(i);
    const Vec grad_i = lagrangian_block_gradient(qp, u, lambda, i);
    Vec v = u.segment(off, ni) - grad_i / c.L_blocks[i];
    v = v.cwiseMax(qp.box.lb.segment(off, ni)).cwiseMin(qp.box.ub.segment(off, ni));
    out.segment(off, ni) = v / M + ((M - 1.0) / M) * u.segment(off, ni);
  });
  return out;
}

double inner_gap_bound(const CoupledQP& qp, const Vec& lambda, const Vec& u,
                       const ProblemConstants& c) {
  const Vec grad = lagrangian_gradient(qp, u, lambda);
  const Vec u_next = box_project(qp.box, u - grad / c.L_glob);
  const Vec d = u - u_next;
  // gap(u) <= [L(u) - L(u_next)] + [L(u_next) - L*]
  //        <= <grad, u - u_next> + ||L_glob d||^2 / (2 sigma_F)
  return grad.dot(d) + (c.L_glob * c.L_glob / (2.0 * c.sigma_F)) * d.squaredNorm();
}

InnerSolution solve_inner(const CoupledQP& qp, const Vec& lambda, const Vec& u0,
                          const ProblemConstants& c, const InnerSettings& s) {
  if (s.eps_in <= 0) throw std::invalid_argument("solve_inner: eps_in must be > 0");
  if (!qp.box.contains(u0, 1e-12)) throw std::invalid_argument("solve_inner: u0 outside box");
  long budget;
  if (s.budget)
    budget = *s.budget;
  else
    budget = inner_iteration_count(c, s.eps_in);

  InnerSolution out;
  out.u_bar = u0;
  out.value = lagrangian(qp, u0, lambda);
  if (s.record_values) out.value_trace.push_back(out.value);

  for (long l = 0;; ++l) {
    if (l >= budget) {
      out.stop_reason = InnerStop::iteration_budget;
      break;
    }
    if (s.use_gap_stop) {
      out.gap_bound = inner_gap_bound(qp, lambda, out.u_bar, c);
      if (out.gap_bound <= s.eps_in / 3.0) {
        out.stop_reason = InnerStop::gap_certified;
        return out;
      }
    }
    out.u_bar = pcd_step(qp, lambda, out.u_bar, c, s.threads);
    out.value = lagrangian(qp, out.u_bar, lambda);
    out.iterations = l + 1;
    if (s.record_values) out.value_trace.push_back(out.value);
  }
  out.gap_bound = inner_gap_bound(qp, lambda, out.u_bar, c);
  return out;
}

}  // namespace ddqp
