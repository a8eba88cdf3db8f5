#include "ddqp/mpc.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <ostream>
#include <random>
#include <set>
#include <sstream>
#include <stdexcept>

namespace ddqp::mpc {

namespace {

Mat blkdiag(const std::vector<Mat>& blocks) {
  Index r = 0, c = 0;
  for (const auto& b : blocks) {
    r += b.rows();
    c += b.cols();
  }
  Mat out = Mat::Zero(r, c);
  Index ro = 0, co = 0;
  for (const auto& b : blocks) {
    out.block(ro, co, b.rows(), b.cols()) = b;
    ro += b.rows();
    co += b.cols();
  }
  return out;
}

bool is_spd(const Mat& S) {
  if (S.rows() == 0) return true;
  if (S.rows() != S.cols() || !S.isApprox(S.transpose(), 1e-10)) return false;
  return detail::symmetric_eig_range(S).first > 0;
}

// Exact componentwise range of M x over a box.
void linear_image_range(const Mat& M, const Box& box, Vec& lo, Vec& hi) {
  lo = Vec::Zero(M.rows());
  hi = Vec::Zero(M.rows());
  for (Index r = 0; r < M.rows(); ++r) {
    double l = 0, h = 0;
    for (Index k = 0; k < M.cols(); ++k) {
      const double m = M(r, k);
      if (m == 0.0) continue;
      const double a = m * box.lb[k];
      const double b = m * box.ub[k];
      l += std::min(a, b);
      h += std::max(a, b);
    }
    lo[r] = l;
    hi[r] = h;
  }
}

double spectral_radius(const Mat& A) {
  if (A.rows() == 0) return 0.0;
  Eigen::EigenSolver<Mat> es(A, /*computeEigenvectors=*/false);
  return es.eigenvalues().cwiseAbs().maxCoeff();
}

// Discrete Lyapunov solve A'PA - P + W = 0 via the Kronecker system.
Mat dlyap(const Mat& A, const Mat& W) {
  const Index n = A.rows();
  if (n == 0) return Mat(0, 0);
  Mat K = Mat::Identity(n * n, n * n);
  const Mat At = A.transpose();
  for (Index i = 0; i < n; ++i)
    for (Index j = 0; j < n; ++j)
      K.block(i * n, j * n, n, n) -= At(i, j) * At;
  Eigen::Map<const Vec> w(W.data(), n * n);
  const Vec pvec = K.partialPivLu().solve(Vec(w));
  Mat P = Eigen::Map<const Mat>(pvec.data(), n, n);
  return 0.5 * (P + P.transpose());
}

// Riccati fixed point for (A, B, Q, R); throws on stagnation.
Mat dare(const Mat& A, const Mat& B, const Mat& Q, const Mat& R) {
  Mat P = Q;
  for (int it = 0; it < 100000; ++it) {
    const Mat BtP = B.transpose() * P;
    const Mat S = R + BtP * B;
    const Mat Knext = S.ldlt().solve(BtP * A);
    const Mat Pn = Q + A.transpose() * P * A - A.transpose() * P * B * Knext;
    const double diff = (Pn - P).cwiseAbs().maxCoeff();
    P = 0.5 * (Pn + Pn.transpose());
    if (diff <= 1e-13 * (1 + P.cwiseAbs().maxCoeff())) return P;
  }
  throw std::runtime_error("default_terminal: Riccati iteration did not converge");
}

}  // namespace

Index NetworkSystem::total_nx() const {
  Index n = 0;
  for (const auto& s : subsystems) n += s.nx;
  return n;
}

Index NetworkSystem::total_nu() const {
  Index n = 0;
  for (const auto& s : subsystems) n += s.nu;
  return n;
}

std::vector<Index> NetworkSystem::x_offsets() const {
  std::vector<Index> off;
  Index acc = 0;
  for (const auto& s : subsystems) {
    off.push_back(acc);
    acc += s.nx;
  }
  return off;
}

std::vector<Index> NetworkSystem::u_offsets() const {
  std::vector<Index> off;
  Index acc = 0;
  for (const auto& s : subsystems) {
    off.push_back(acc);
    acc += s.nu;
  }
  return off;
}

Mat NetworkSystem::global_A() const {
  const auto xo = x_offsets();
  Mat A = Mat::Zero(total_nx(), total_nx());
  for (Index i = 0; i < M(); ++i)
    for (const auto& [j, Aij] : subsystems[static_cast<size_t>(i)].A)
      A.block(xo[static_cast<size_t>(i)], xo[static_cast<size_t>(j)], Aij.rows(), Aij.cols()) = Aij;
  return A;
}

Mat NetworkSystem::global_B() const {
  const auto xo = x_offsets();
  const auto uo = u_offsets();
  Mat B = Mat::Zero(total_nx(), total_nu());
  for (Index i = 0; i < M(); ++i)
    for (const auto& [j, Bij] : subsystems[static_cast<size_t>(i)].B)
      B.block(xo[static_cast<size_t>(i)], uo[static_cast<size_t>(j)], Bij.rows(), Bij.cols()) = Bij;
  return B;
}

Mat NetworkSystem::global_Q() const {
  std::vector<Mat> qs;
  for (const auto& s : subsystems) qs.push_back(s.Q);
  return blkdiag(qs);
}

Mat NetworkSystem::global_R() const {
  std::vector<Mat> rs;
  for (const auto& s : subsystems) rs.push_back(s.R);
  return blkdiag(rs);
}

Mat NetworkSystem::global_P() const {
  std::vector<Mat> ps;
  for (const auto& s : subsystems) ps.push_back(s.P);
  return blkdiag(ps);
}

namespace {
Box concat_boxes(const std::vector<Box>& boxes) {
  Index n = 0;
  for (const auto& b : boxes) n += b.dim();
  Box out{Vec(n), Vec(n)};
  Index off = 0;
  for (const auto& b : boxes) {
    out.lb.segment(off, b.dim()) = b.lb;
    out.ub.segment(off, b.dim()) = b.ub;
    off += b.dim();
  }
  return out;
}
}  // namespace

Box NetworkSystem::global_x_box() const {
  std::vector<Box> bs;
  for (const auto& s : subsystems) bs.push_back(s.x_box);
  return concat_boxes(bs);
}

Box NetworkSystem::global_u_box() const {
  std::vector<Box> bs;
  for (const auto& s : subsystems) bs.push_back(s.u_box);
  return concat_boxes(bs);
}

Box NetworkSystem::global_xf_box() const {
  std::vector<Box> bs;
  for (const auto& s : subsystems) bs.push_back(s.xf_box);
  return concat_boxes(bs);
}

std::vector<std::string> NetworkSystem::validate() const {
  std::vector<std::string> v;
  if (subsystems.empty()) {
    v.push_back("no subsystems");
    return v;
  }
  if (neighbors.size() != subsystems.size()) {
    v.push_back("neighbor list count != M");
    return v;
  }
  for (Index i = 0; i < M(); ++i) {
    const auto& s = subsystems[static_cast<size_t>(i)];
    const auto& ni = neighbors[static_cast<size_t>(i)];
    const std::string tag = "subsystem " + std::to_string(i) + ": ";
    if (std::find(ni.begin(), ni.end(), static_cast<int>(i)) == ni.end())
      v.push_back(tag + "neighbor set must include i");
    if (s.nx < 1) v.push_back(tag + "nx must be >= 1");
    for (const auto& [j, Aij] : s.A) {
      if (mode == CouplingMode::input_coupled && j != static_cast<int>(i))
        v.push_back(tag + "input_coupled mode allows only A_ii");
      if (std::find(ni.begin(), ni.end(), j) == ni.end())
        v.push_back(tag + "A_ij given for non-neighbor j=" + std::to_string(j));
      if (Aij.rows() != s.nx || Aij.cols() != subsystems[static_cast<size_t>(j)].nx)
        v.push_back(tag + "A_ij dimension mismatch, j=" + std::to_string(j));
    }
    for (const auto& [j, Bij] : s.B) {
      if (std::find(ni.begin(), ni.end(), j) == ni.end())
        v.push_back(tag + "B_ij given for non-neighbor j=" + std::to_string(j));
      if (Bij.rows() != s.nx || Bij.cols() != subsystems[static_cast<size_t>(j)].nu)
        v.push_back(tag + "B_ij dimension mismatch, j=" + std::to_string(j));
    }
    if (s.A.find(static_cast<int>(i)) == s.A.end()) v.push_back(tag + "missing A_ii");
    if (!is_spd(s.Q) || s.Q.rows() != s.nx) v.push_back(tag + "Q not SPD of size nx");
    if (!is_spd(s.P) || s.P.rows() != s.nx) v.push_back(tag + "P not SPD of size nx");
    if (s.nu > 0 && (!is_spd(s.R) || s.R.rows() != s.nu)) v.push_back(tag + "R not SPD of size nu");
    if (s.x_box.dim() != s.nx || s.xf_box.dim() != s.nx) v.push_back(tag + "state box dim");
    if (s.u_box.dim() != s.nu) v.push_back(tag + "input box dim");
  }
  return v;
}

CondensedMpc condense(const NetworkSystem& sys, long N) {
  if (N < 1) throw std::invalid_argument("condense: N must be >= 1");
  const auto report = sys.validate();
  if (!report.empty()) {
    std::ostringstream os;
    for (const auto& s : report) os << s << "\n";
    throw std::invalid_argument("condense: invalid system:\n" + os.str());
  }

  CondensedMpc c;
  c.N = N;
  c.A = sys.global_A();
  c.B = sys.global_B();
  c.Q_total = sys.global_Q();
  c.nx = sys.total_nx();
  c.nu = sys.total_nu();
  c.u_offs = sys.u_offsets();
  if (c.nu < 1) throw std::invalid_argument("condense: system has no inputs");

  const Mat Qg = c.Q_total;
  const Mat Rg = sys.global_R();
  const Mat Pg = sys.global_P();
  const Index nx = c.nx, nu = c.nu;

  // Prediction matrices, stage-major: X = Phi x + Gamma u_sm.
  std::vector<Mat> Apow(static_cast<size_t>(N) + 1);
  Apow[0] = Mat::Identity(nx, nx);
  for (long t = 1; t <= N; ++t) Apow[static_cast<size_t>(t)] = c.A * Apow[static_cast<size_t>(t - 1)];
  c.Phi = Mat::Zero(N * nx, nx);
  c.Gamma = Mat::Zero(N * nx, N * nu);
  for (long t = 1; t <= N; ++t) {
    c.Phi.middleRows((t - 1) * nx, nx) = Apow[static_cast<size_t>(t)];
    for (long s = 0; s < t; ++s)
      c.Gamma.block((t - 1) * nx, s * nu, nx, nu) = Apow[static_cast<size_t>(t - 1 - s)] * c.B;
  }

  // Stacked stage weights: Q for stages 1..N-1, P at stage N; R every stage.
  Mat Qbar = Mat::Zero(N * nx, N * nx);
  for (long t = 1; t < N; ++t) Qbar.block((t - 1) * nx, (t - 1) * nx, nx, nx) = Qg;
  Qbar.block((N - 1) * nx, (N - 1) * nx, nx, nx) = Pg;
  Mat Rbar = Mat::Zero(N * nu, N * nu);
  for (long t = 0; t < N; ++t) Rbar.block(t * nu, t * nu, nu, nu) = Rg;

  const Mat H_sm = 2.0 * (c.Gamma.transpose() * Qbar * c.Gamma + Rbar);
  const Mat W_sm = 2.0 * c.Gamma.transpose() * Qbar * c.Phi;
  c.offset = c.Phi.transpose() * Qbar * c.Phi + Qg;

  // Constraint rows from the state and terminal boxes, grouped by subsystem;
  // rows exist only for finite bounds.
  const auto xo = sys.x_offsets();
  std::vector<Mat> Grows_sm;
  std::vector<Mat> Erows;
  std::vector<double> gvals;
  std::vector<Index> row_sizes;
  for (Index i = 0; i < sys.M(); ++i) {
    const auto& sub = sys.subsystems[static_cast<size_t>(i)];
    Index rows_for_i = 0;
    for (long t = 1; t <= N; ++t) {
      const Box& bx = (t < N) ? sub.x_box : sub.xf_box;
      for (Index k = 0; k < sub.nx; ++k) {
        const Index ridx = (t - 1) * nx + xo[static_cast<size_t>(i)] + k;
        if (std::isfinite(bx.ub[k])) {
          Grows_sm.push_back(c.Gamma.row(ridx));
          Erows.push_back(c.Phi.row(ridx));
          gvals.push_back(-bx.ub[k]);
          ++rows_for_i;
        }
        if (std::isfinite(bx.lb[k])) {
          Grows_sm.push_back(-c.Gamma.row(ridx));
          Erows.push_back(-c.Phi.row(ridx));
          gvals.push_back(bx.lb[k]);
          ++rows_for_i;
        }
      }
    }
    row_sizes.push_back(rows_for_i);
  }
  const Index p = static_cast<Index>(Grows_sm.size());
  if (p < 1)
    throw std::invalid_argument("condense: no finite state bounds; nothing to couple on");

  Mat G_sm(p, N * nu);
  c.E = Mat(p, nx);
  c.g = Vec(p);
  for (Index r = 0; r < p; ++r) {
    G_sm.row(r) = Grows_sm[static_cast<size_t>(r)];
    c.E.row(r) = Erows[static_cast<size_t>(r)];
    c.g[r] = gvals[static_cast<size_t>(r)];
  }

  // Subsystem-major permutation of the inputs.
  std::vector<Index> block_sizes;
  c.input_blocks.assign(static_cast<size_t>(sys.M()), -1);
  c.perm.clear();
  Box ubox{Vec(N * nu), Vec(N * nu)};
  Index bm = 0;
  for (Index i = 0; i < sys.M(); ++i) {
    const auto& sub = sys.subsystems[static_cast<size_t>(i)];
    if (sub.nu == 0) continue;
    c.input_blocks[static_cast<size_t>(i)] = static_cast<Index>(block_sizes.size());
    block_sizes.push_back(N * sub.nu);
    for (long t = 0; t < N; ++t) {
      for (Index k = 0; k < sub.nu; ++k) {
        c.perm.push_back(t * nu + c.u_offs[static_cast<size_t>(i)] + k);
        ubox.lb[bm] = sub.u_box.lb[k];
        ubox.ub[bm] = sub.u_box.ub[k];
        ++bm;
      }
    }
  }
  c.partition = BlockPartition(block_sizes);
  c.box = ubox;

  c.H = Mat(N * nu, N * nu);
  c.G = Mat(p, N * nu);
  c.W = Mat(N * nu, nx);
  for (Index j = 0; j < N * nu; ++j) {
    c.G.col(j) = G_sm.col(c.perm[static_cast<size_t>(j)]);
    c.W.row(j) = W_sm.row(c.perm[static_cast<size_t>(j)]);
    for (Index j2 = 0; j2 < N * nu; ++j2)
      c.H(j, j2) = H_sm(c.perm[static_cast<size_t>(j)], c.perm[static_cast<size_t>(j2)]);
  }
  c.w = Vec::Zero(N * nu);

  if (sys.mode == CouplingMode::input_coupled) {
    // N^i -> hat/bar neighborhoods over the input-owning blocks.
    const Index M = sys.M();
    std::vector<std::set<Index>> nbar(static_cast<size_t>(M)), nhat(static_cast<size_t>(M));
    auto is_nb = [&](Index r, Index j) {
      const auto& nr = sys.neighbors[static_cast<size_t>(r)];
      return std::find(nr.begin(), nr.end(), static_cast<int>(j)) != nr.end();
    };
    for (Index i = 0; i < M; ++i)
      for (Index j = 0; j < M; ++j)
        if (is_nb(j, i)) nbar[static_cast<size_t>(i)].insert(j);  // j with i in N^j
    for (Index i = 0; i < M; ++i) {
      for (int j : sys.neighbors[static_cast<size_t>(i)]) nhat[static_cast<size_t>(i)].insert(j);
      for (Index j : nbar[static_cast<size_t>(i)])
        for (int l : sys.neighbors[static_cast<size_t>(j)]) nhat[static_cast<size_t>(i)].insert(l);
    }

    SparsityPattern sp;
    sp.row_sizes = row_sizes;
    sp.hessian_neighbors.resize(block_sizes.size());
    sp.coupling_row_blocks.resize(block_sizes.size());
    for (Index i = 0; i < M; ++i) {
      const Index bi = c.input_blocks[static_cast<size_t>(i)];
      if (bi < 0) continue;
      for (Index j : nhat[static_cast<size_t>(i)]) {
        const Index bj = c.input_blocks[static_cast<size_t>(j)];
        if (bj >= 0) sp.hessian_neighbors[static_cast<size_t>(bi)].push_back(bj);
      }
      for (Index r : nbar[static_cast<size_t>(i)])
        sp.coupling_row_blocks[static_cast<size_t>(bi)].push_back(r);
      std::sort(sp.hessian_neighbors[static_cast<size_t>(bi)].begin(),
                sp.hessian_neighbors[static_cast<size_t>(bi)].end());
      std::sort(sp.coupling_row_blocks[static_cast<size_t>(bi)].begin(),
                sp.coupling_row_blocks[static_cast<size_t>(bi)].end());
    }
    c.sparsity = std::move(sp);
  }

  CoupledQP probe = instantiate(c, Vec::Zero(nx));
  c.consts = constants(probe);
  return c;
}

CoupledQP instantiate(const CondensedMpc& c, const Vec& x) {
  if (x.size() != c.nx) throw std::invalid_argument("instantiate: dim(x) != nx");
  CoupledQP qp;
  qp.H = c.H;
  qp.q = c.W * x + c.w;
  qp.G = c.G;
  qp.g = c.E * x + c.g;
  qp.box = c.box;
  qp.partition = c.partition;
  qp.sparsity = c.sparsity;
  return qp;
}

double full_cost(const CondensedMpc& c, const Vec& x, const Vec& u) {
  return 0.5 * u.dot(c.H * u) + (c.W * x + c.w).dot(u) + x.dot(c.offset * x);
}

Vec predicted_states(const CondensedMpc& c, const Vec& x, const Vec& u_hat) {
  Vec u_sm(c.N * c.nu);
  for (Index j = 0; j < u_hat.size(); ++j) u_sm[c.perm[static_cast<size_t>(j)]] = u_hat[j];
  return c.Phi * x + c.Gamma * u_sm;
}

Vec first_input(const CondensedMpc& c, const Vec& u_hat) {
  Vec u0 = Vec::Zero(c.nu);
  for (size_t i = 0; i < c.input_blocks.size(); ++i) {
    const Index b = c.input_blocks[i];
    if (b < 0) continue;
    const Index nu_i = c.partition.size(b) / c.N;
    u0.segment(c.u_offs[i], nu_i) = u_hat.segment(c.partition.offset(b), nu_i);
  }
  return u0;
}

CoupledQP tighten(const CoupledQP& qp, double eps_c) {
  if (eps_c <= 0) throw std::invalid_argument("tighten: eps_c must be > 0");
  CoupledQP t = qp;
  t.g.array() += eps_c;
  return t;
}

double eps_c_max(const CoupledQP& qp, const Vec& u_tilde) {
  const double slack = -constraints(qp, u_tilde).maxCoeff();
  if (slack <= 0) throw std::invalid_argument("eps_c_max: u_tilde is not strictly feasible");
  return 0.5 * slack;
}

double c_of_p(Method m, Index p) {
  const double sp = std::sqrt(static_cast<double>(p));
  switch (m) {
    case Method::idg: return sp + 0.05;
    case Method::idfg: return sp + 0.5;
    default: throw std::invalid_argument("c_of_p: no constant for this method");
  }
}

double admissibility_cap(Method m, Index p, double R_d_bar, double min_slack) {
  return c_of_p(m, p) * R_d_bar * min_slack;
}

MpcParams mpc_params(Method m, double eps_out, double L_d, double R_d_bar,
                     Index p, double min_slack) {
  if (eps_out <= 0 || L_d <= 0 || R_d_bar <= 0 || p < 1 || min_slack <= 0)
    throw std::invalid_argument("mpc_params: inputs must be positive");
  if (eps_out > admissibility_cap(m, p, R_d_bar, min_slack))
    throw std::invalid_argument("mpc_params: eps_out exceeds the admissibility cap");
  const double sp = std::sqrt(static_cast<double>(p));
  MpcParams out;
  switch (m) {
    case Method::idg: {
      const double a = 2.0 * sp + 0.1;
      out.k_out = std::max<long>(
          1, static_cast<long>(std::floor(10.0 * a * L_d * R_d_bar * R_d_bar / eps_out)));
      out.eps_in = eps_out / (20.0 * a);
      out.eps_c = eps_out / (a * R_d_bar);
      break;
    }
    case Method::idfg: {
      const double a = 2.0 * sp + 1.0;
      out.k_out = std::max<long>(
          1, static_cast<long>(std::floor(8.0 * std::sqrt(a * L_d * R_d_bar * R_d_bar / eps_out))));
      out.eps_in = eps_out * std::sqrt(eps_out) /
                   (8.0 * std::sqrt(2.0) * std::sqrt(L_d) * R_d_bar * std::pow(a, 1.5));
      out.eps_c = eps_out / (a * R_d_bar);
      break;
    }
    default:
      throw std::invalid_argument("mpc_params: no parameter rule for this method");
  }
  return out;
}

MpcStepRecord solve_mpc_step(const CondensedMpc& c, const Vec& x, Method m,
                             double eps_out, const Vec& slater, double R_d_bar,
                             const StepOptions& opt) {
  if (m == Method::subgrad)
    throw std::invalid_argument("solve_mpc_step: the subgradient baseline has no MPC rule");
  const CoupledQP qp = instantiate(c, x);
  const double slack = -constraints(qp, slater).maxCoeff();
  if (!qp.box.contains(slater, 1e-12) || slack <= 0)
    throw std::invalid_argument("solve_mpc_step: slater vector is not strictly feasible");

  const MpcParams prm = mpc_params(m, eps_out, c.consts.L_d_exact, R_d_bar, qp.p(), slack);
  const CoupledQP qp_t = tighten(qp, prm.eps_c);

  OuterParams op;
  op.method = m;
  op.eps_out = eps_out;
  op.eps_in = prm.eps_in;
  op.k_out = prm.k_out;
  op.L_used = c.consts.L_d_exact;
  op.threads = opt.threads;
  op.observer = opt.observer;
  const SolveResult res = solve(qp_t, op);

  MpcStepRecord rec;
  rec.x = x;
  rec.eps_out = eps_out;
  rec.eps_in = prm.eps_in;
  rec.eps_c = prm.eps_c;
  rec.k_out = prm.k_out;
  rec.k_used = res.trace.count;
  rec.R_d_bar = R_d_bar;
  rec.u_hat = res.u_hat;
  rec.applied = first_input(c, res.u_hat);
  rec.lambda_hat = res.lambda_hat;
  rec.slack_min = -constraints(qp, res.u_hat).maxCoeff();
  rec.F_value = full_cost(c, x, res.u_hat);
  if (rec.slack_min <= 0)
    throw std::runtime_error("solve_mpc_step: tightened solve returned a point without slack");
  return rec;
}

Vec shift_slater(const CondensedMpc& c, const Vec& u_hat, const Vec& x, const Mat& K) {
  if (K.rows() != c.nu || K.cols() != c.nx)
    throw std::invalid_argument("shift_slater: K must be nu x nx");
  const Vec X = predicted_states(c, x, u_hat);
  const Vec xN = X.tail(c.nx);
  const Vec uK = K * xN;
  Vec out(u_hat.size());
  for (size_t i = 0; i < c.input_blocks.size(); ++i) {
    const Index b = c.input_blocks[i];
    if (b < 0) continue;
    const Index nu_i = c.partition.size(b) / c.N;
    const Index off = c.partition.offset(b);
    if (c.N > 1)
      out.segment(off, (c.N - 1) * nu_i) = u_hat.segment(off + nu_i, (c.N - 1) * nu_i);
    out.segment(off + (c.N - 1) * nu_i, nu_i) = uK.segment(c.u_offs[i], nu_i);
  }
  return out;
}

double next_accuracy(const Vec& x, const Mat& Q_total, double c_p,
                     double slack_plus, double eps_min) {
  if (slack_plus <= 0) throw std::invalid_argument("next_accuracy: slack must be > 0");
  const double xq = x.dot(Q_total * x);
  return std::max(eps_min, std::min(0.5 * xq, c_p * slack_plus));
}

double update_Rd(const Vec& lambda_hat, double eps_c, double eps_out,
                 double x_Q_sq, double slack_plus, double R_min) {
  if (slack_plus <= 0) throw std::invalid_argument("update_Rd: slack must be > 0");
  const double numer = eps_c * lambda_hat.sum() + 4.0 * eps_out - x_Q_sq;
  return std::max(R_min, numer / slack_plus);
}

NetworkSystem with_terminal(NetworkSystem sys, const TerminalIngredients& t) {
  if (t.P.size() != sys.subsystems.size() || t.xf.size() != sys.subsystems.size())
    throw std::invalid_argument("with_terminal: per-subsystem list size mismatch");
  for (size_t i = 0; i < sys.subsystems.size(); ++i) {
    sys.subsystems[i].P = t.P[i];
    sys.subsystems[i].xf_box = t.xf[i];
  }
  return sys;
}

TerminalIngredients default_terminal(const NetworkSystem& sys) {
  const auto xo = sys.x_offsets();
  const auto uo = sys.u_offsets();
  const Index nx = sys.total_nx();
  const Index nu = sys.total_nu();

  Mat K = Mat::Zero(nu, nx);
  for (Index i = 0; i < sys.M(); ++i) {
    const auto& s = sys.subsystems[static_cast<size_t>(i)];
    if (s.nu == 0) continue;
    const Mat& Aii = s.A.at(static_cast<int>(i));
    const Mat Bii = s.B.count(static_cast<int>(i)) ? s.B.at(static_cast<int>(i))
                                                   : Mat::Zero(s.nx, s.nu);
    const Mat P = dare(Aii, Bii, s.Q, s.R);
    const Mat Ki = -(s.R + Bii.transpose() * P * Bii).ldlt().solve(Bii.transpose() * P * Aii);
    K.block(uo[static_cast<size_t>(i)], xo[static_cast<size_t>(i)], s.nu, s.nx) = Ki;
  }

  const Mat A = sys.global_A();
  const Mat B = sys.global_B();
  const Mat Mcl = A + B * K;
  if (spectral_radius(Mcl) >= 1.0 - 1e-9)
    throw std::runtime_error("default_terminal: closed loop not contractive");

  const Mat Qg = sys.global_Q();
  const Mat Rg = sys.global_R();
  const Mat Qcl = Qg + K.transpose() * Rg * K;

  // Per-subsystem Lyapunov weights with margin mu; the cross-coupling terms
  // of the global LMI must be absorbed by the margin.
  std::vector<Mat> P_list;
  bool ok = false;
  for (double mu : {0.25, 0.5, 1.0, 2.0, 4.0, 8.0}) {
    P_list.clear();
    for (Index i = 0; i < sys.M(); ++i) {
      const auto& s = sys.subsystems[static_cast<size_t>(i)];
      const Mat Acl_i = Mcl.block(xo[static_cast<size_t>(i)], xo[static_cast<size_t>(i)], s.nx, s.nx);
      const Mat Qcl_i = Qcl.block(xo[static_cast<size_t>(i)], xo[static_cast<size_t>(i)], s.nx, s.nx);
      if (spectral_radius(Acl_i) >= 1.0 - 1e-9)
        throw std::runtime_error("default_terminal: local closed loop not contractive");
      P_list.push_back(dlyap(Acl_i, Mat(Qcl_i * (1.0 + mu))));
    }
    const Mat Pg = blkdiag(P_list);
    const Mat S = Mcl.transpose() * Pg * Mcl - Pg + Qcl;
    if (detail::symmetric_eig_range(Mat(0.5 * (S + S.transpose()))).second <= 1e-10) {
      ok = true;
      break;
    }
  }
  if (!ok) throw std::runtime_error("default_terminal: no Lyapunov margin absorbed the coupling");

  // Invariant symmetric box from a Perron-style vector of |A+BK|.
  const Mat Mabs = Mcl.cwiseAbs();
  if (spectral_radius(Mabs) >= 1.0 - 1e-9)
    throw std::runtime_error("default_terminal: |A+BK| not contractive, no box-invariant set");
  const Vec b = (Mat::Identity(nx, nx) - Mabs).partialPivLu().solve(Vec::Ones(nx));
  if (b.minCoeff() <= 0)
    throw std::runtime_error("default_terminal: invariant box vector not positive");

  const Box X = sys.global_x_box();
  const Box U = sys.global_u_box();
  double s_max = kInf;
  for (Index k = 0; k < nx; ++k) {
    if (X.ub[k] <= 0 || X.lb[k] >= 0)
      throw std::runtime_error("default_terminal: state box must contain 0 in its interior");
    s_max = std::min(s_max, std::min(X.ub[k], -X.lb[k]) / b[k]);
  }
  const Vec Kb = Mat(K.cwiseAbs()) * b;
  for (Index r = 0; r < nu; ++r) {
    if (Kb[r] <= 0) continue;
    if (U.ub[r] <= 0 || U.lb[r] >= 0)
      throw std::runtime_error("default_terminal: input box must contain 0 in its interior");
    s_max = std::min(s_max, std::min(U.ub[r], -U.lb[r]) / Kb[r]);
  }
  const double s = 0.9 * s_max;

  TerminalIngredients out;
  out.K = K;
  out.P = P_list;
  for (Index i = 0; i < sys.M(); ++i) {
    const auto& sub = sys.subsystems[static_cast<size_t>(i)];
    const Vec bi = b.segment(xo[static_cast<size_t>(i)], sub.nx);
    out.xf.push_back(Box{-s * bi, s * bi});
  }
  return out;
}

std::string TerminalReport::str() const {
  std::ostringstream os;
  for (const auto& v : violations) os << v << "\n";
  return os.str();
}

TerminalReport check_terminal(const NetworkSystem& sys, const Mat& K, const Mat& P,
                              const Box& xf, int sample_count) {
  TerminalReport rep;
  const Mat A = sys.global_A();
  const Mat B = sys.global_B();
  const Index nx = sys.total_nx();
  if (K.rows() != sys.total_nu() || K.cols() != nx) {
    rep.violations.push_back("K dimension mismatch");
    return rep;
  }
  if (P.rows() != nx || P.cols() != nx || xf.dim() != nx) {
    rep.violations.push_back("P or X^f dimension mismatch");
    return rep;
  }
  const Mat Mcl = A + B * K;

  // Lyapunov decrease: (A+BK)'P(A+BK) - P + Q + K'RK <= 0.
  const Mat S = Mcl.transpose() * P * Mcl - P + sys.global_Q() + K.transpose() * sys.global_R() * K;
  const double lmi_max = detail::symmetric_eig_range(Mat(0.5 * (S + S.transpose()))).second;
  if (lmi_max > 1e-8 * (1.0 + P.cwiseAbs().maxCoeff()))
    rep.violations.push_back("Lyapunov LMI fails: max eigenvalue " + std::to_string(lmi_max));

  // Exact interval image of X^f under A+BK must land strictly inside.
  Vec lo, hi;
  linear_image_range(Mcl, xf, lo, hi);
  for (Index j = 0; j < nx; ++j) {
    const double margin_u = 1e-12 * (1.0 + std::abs(xf.ub[j]));
    const double margin_l = 1e-12 * (1.0 + std::abs(xf.lb[j]));
    if (!(hi[j] < xf.ub[j] - margin_u) || !(lo[j] > xf.lb[j] + margin_l)) {
      rep.violations.push_back("X^f not positively invariant at coordinate " + std::to_string(j));
      break;
    }
  }

  const Box X = sys.global_x_box();
  for (Index j = 0; j < nx; ++j) {
    if (xf.lb[j] < X.lb[j] - 1e-12 || xf.ub[j] > X.ub[j] + 1e-12) {
      rep.violations.push_back("X^f not contained in the state box");
      break;
    }
  }

  const Box U = sys.global_u_box();
  Vec ulo, uhi;
  linear_image_range(K, xf, ulo, uhi);
  for (Index r = 0; r < K.rows(); ++r) {
    if (ulo[r] < U.lb[r] - 1e-12 || uhi[r] > U.ub[r] + 1e-12) {
      rep.violations.push_back("terminal controller leaves the input box at row " +
                               std::to_string(r));
      break;
    }
  }

  // Random spot checks inside X^f (the interval check above is exact; these
  // exercise the same condition pointwise).
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  for (int s = 0; s < sample_count; ++s) {
    Vec x(nx);
    for (Index j = 0; j < nx; ++j) x[j] = xf.lb[j] + unif(rng) * (xf.ub[j] - xf.lb[j]);
    const Vec xn = Mcl * x;
    if (!xf.contains(xn, 1e-12)) {
      rep.violations.push_back("sampled point leaves X^f");
      break;
    }
  }
  return rep;
}

std::vector<MpcStepRecord> closed_loop(const NetworkSystem& sys, long N, const Vec& x0,
                                       int steps, Method m, double eps_out0,
                                       const Vec& slater0, const TerminalIngredients& term,
                                       const ClosedLoopOptions& opt) {
  const NetworkSystem sys_t = with_terminal(sys, term);
  if (opt.run_terminal_check) {
    std::vector<Mat> ps = term.P;
    const TerminalReport rep = check_terminal(sys_t, term.K, blkdiag(ps), sys_t.global_xf_box());
    if (!rep.ok())
      throw std::invalid_argument("closed_loop: terminal ingredients rejected:\n" + rep.str());
  }
  const CondensedMpc c = condense(sys_t, N);

  std::vector<MpcStepRecord> out;
  Vec x = x0;
  Vec slater = slater0;
  double eps_out = eps_out0;

  // First step: R_d from the Slater bound with lambda_tilde = 0; d(0) is
  // bounded below by the box minimum of the quadratic, evaluated directly.
  const CoupledQP qp0 = instantiate(c, x0);
  const double slack0 = -constraints(qp0, slater0).maxCoeff();
  if (slack0 <= 0) throw std::invalid_argument("closed_loop: slater0 not strictly feasible");
  double R_d = 0;
  {
    // d(0) is the box minimum of the plain quadratic. The bound needs a value
    // <= d(0), so run projected gradient and subtract the certified gap.
    const Vec lam0 = Vec::Zero(qp0.p());
    Vec u = box_project(qp0.box, Vec::Zero(qp0.n()));
    const ProblemConstants& cc = c.consts;
    for (int it = 0; it < 200000; ++it) {
      if (inner_gap_bound(qp0, lam0, u, cc) <= 1e-10 * (1 + std::abs(objective(qp0, u)))) break;
      u = box_project(qp0.box, u - (qp0.H * u + qp0.q) / cc.L_glob);
    }
    const double d0_lower = objective(qp0, u) - inner_gap_bound(qp0, lam0, u, cc);
    R_d = std::max(opt.R_min, slater_dual_bound(qp0, slater0, Vec::Zero(qp0.p()), d0_lower));
  }

  for (int t = 0; t < steps; ++t) {
    const CoupledQP qp = instantiate(c, x);
    const double slack = -constraints(qp, slater).maxCoeff();
    if (slack <= 0)
      throw std::runtime_error("closed_loop: Slater vector infeasible at step " +
                               std::to_string(t));
    const double cap = admissibility_cap(m, qp.p(), R_d, slack);
    const double eps_step = std::max(opt.eps_min, std::min(eps_out, cap));

    StepOptions sopt;
    sopt.threads = opt.threads;
    MpcStepRecord rec = solve_mpc_step(c, x, m, eps_step, slater, R_d, sopt);

    const double x_Q_sq = x.dot(c.Q_total * x);
    if (t > 0) {
      const auto& prev = out.back();
      const double prev_xq = prev.x.dot(c.Q_total * prev.x);
      rec.lyapunov_ok =
          rec.F_value <= prev.F_value - prev_xq + rec.eps_out + 1e-9 * (1 + std::abs(prev.F_value));
    }

    const Vec x_next = c.A * x + c.B * rec.applied;
    const Vec slater_next = shift_slater(c, rec.u_hat, x, term.K);
    const CoupledQP qp_next = instantiate(c, x_next);
    const double slack_next = -constraints(qp_next, slater_next).maxCoeff();
    if (slack_next <= 0)
      throw std::runtime_error(
          "closed_loop: shifted Slater vector lost strict feasibility at step " +
          std::to_string(t) + " (terminal ingredients violate the invariance assumption)");

    const double R_next =
        update_Rd(rec.lambda_hat, rec.eps_c, rec.eps_out, x_Q_sq, slack_next, opt.R_min);
    double eps_next = next_accuracy(x, c.Q_total, c_of_p(m, qp.p()), slack_next, opt.eps_min);
    eps_next = std::max(opt.eps_min,
                        std::min(eps_next, admissibility_cap(m, qp.p(), R_next, slack_next)));

    out.push_back(std::move(rec));
    x = x_next;
    slater = slater_next;
    R_d = R_next;
    eps_out = eps_next;
  }
  return out;
}

void write_closed_loop_csv(std::ostream& os, const std::vector<MpcStepRecord>& steps) {
  os << "t,x_norm,F,eps_out,eps_c,k_out,slack_min,lyapunov_ok\n";
  os.precision(17);
  for (size_t t = 0; t < steps.size(); ++t) {
    const auto& r = steps[t];
    os << t << ',' << r.x.norm() << ',' << r.F_value << ',' << r.eps_out << ',' << r.eps_c
       << ',' << r.k_used << ',' << r.slack_min << ',' << (r.lyapunov_ok ? 1 : 0) << '\n';
  }
}

}  // namespace ddqp::mpc
