#include "ddqp/model.hpp"

#include <Eigen/Eigenvalues>

#include <cmath>
#include <random>
#include <sstream>
#include <stdexcept>

namespace ddqp {

BlockPartition::BlockPartition(std::vector<Index> sizes) : sizes_(std::move(sizes)) {
  if (sizes_.empty()) throw std::invalid_argument("BlockPartition: need at least one block");
  offsets_.reserve(sizes_.size());
  for (Index s : sizes_) {
    if (s < 1) throw std::invalid_argument("BlockPartition: block sizes must be >= 1");
    offsets_.push_back(total_);
    total_ += s;
  }
}

BlockPartition BlockPartition::uniform(Index block_count, Index block_size) {
  return BlockPartition(std::vector<Index>(static_cast<size_t>(block_count), block_size));
}

BlockPartition BlockPartition::single(Index n) { return BlockPartition({n}); }

bool Box::contains(const Vec& v, double tol) const {
  if (v.size() != lb.size()) return false;
  for (Index j = 0; j < v.size(); ++j) {
    if (v[j] < lb[j] - tol || v[j] > ub[j] + tol) return false;
  }
  return true;
}

bool Box::bounded() const {
  return lb.allFinite() && ub.allFinite();
}

double Box::diameter() const {
  if (!bounded()) return kInf;
  return (ub - lb).norm();
}

Box Box::centered(Index n, double radius) {
  return Box{Vec::Constant(n, -radius), Vec::Constant(n, radius)};
}

Vec box_project(const Box& box, const Vec& v) {
  return v.cwiseMax(box.lb).cwiseMin(box.ub);
}

std::vector<Index> SparsityPattern::row_offsets() const {
  std::vector<Index> off;
  off.reserve(row_sizes.size());
  Index acc = 0;
  for (Index s : row_sizes) {
    off.push_back(acc);
    acc += s;
  }
  return off;
}

std::string ValidationReport::str() const {
  std::ostringstream os;
  for (const auto& v : violations) os << v << "\n";
  return os.str();
}

namespace {

constexpr double kEigTol = 1e-10;

void check_dim(const CoupledQP& qp, const Vec& u) {
  if (u.size() != qp.n()) throw std::invalid_argument("dimension mismatch: dim(u) != n");
}

void check_lambda(const CoupledQP& qp, const Vec& lambda) {
  if (lambda.size() != qp.p()) throw std::invalid_argument("dimension mismatch: dim(lambda) != p");
  if (lambda.size() > 0 && lambda.minCoeff() < 0)
    throw std::invalid_argument("negative multiplier entries");
}

}  // namespace

namespace detail {

std::pair<double, double> symmetric_eig_range(const Mat& S) {
  const Index n = S.rows();
  if (n == 0) return {0.0, 0.0};
  if (n <= 2000) {
    Eigen::SelfAdjointEigenSolver<Mat> es(S, Eigen::EigenvaluesOnly);
    if (es.info() != Eigen::Success) throw std::runtime_error("symmetric eigensolve failed");
    return {es.eigenvalues().minCoeff(), es.eigenvalues().maxCoeff()};
  }
  // Power iteration for the dominant eigenvalue of S, then of sI - S.
  auto dominant = [&](const Mat& A) {
    std::mt19937_64 rng(12345);
    std::normal_distribution<double> nd;
    Vec v(A.rows());
    for (Index i = 0; i < v.size(); ++i) v[i] = nd(rng);
    v.normalize();
    double mu = 0;
    for (int it = 0; it < 100000; ++it) {
      Vec w = A * v;
      double norm = w.norm();
      if (norm == 0) return 0.0;
      w /= norm;
      double mu_new = w.dot(A * w);
      if (std::abs(mu_new - mu) <= kEigTol * std::max(1.0, std::abs(mu_new))) return mu_new;
      mu = mu_new;
      v = w;
    }
    return mu;
  };
  const double shift = S.cwiseAbs().rowwise().sum().maxCoeff();  // >= rho(S)
  const double top = shift - dominant(Mat(shift * Mat::Identity(n, n) - S));
  const double bottom = dominant(S + shift * Mat::Identity(n, n)) - shift;
  return {std::min(top, bottom), std::max(top, bottom)};
}

double spectral_norm(const Mat& A) {
  if (A.rows() == 0 || A.cols() == 0) return 0.0;
  const Mat S = (A.rows() <= A.cols()) ? Mat(A * A.transpose()) : Mat(A.transpose() * A);
  auto [lo, hi] = symmetric_eig_range(S);
  (void)lo;
  return std::sqrt(std::max(0.0, hi));
}

}  // namespace detail

ValidationReport validate_problem(const CoupledQP& qp) {
  ValidationReport rep;
  const Index n = qp.H.rows();
  auto add = [&rep](const std::string& s) { rep.violations.push_back(s); };

  if (qp.H.cols() != n) add("H not square");
  if (qp.q.size() != n) add("dim(q) != n");
  if (qp.G.cols() != n) add("G column count != n");
  if (qp.g.size() != qp.G.rows()) add("dim(g) != p");
  if (qp.box.lb.size() != n || qp.box.ub.size() != n) add("box dimension != n");
  if (qp.partition.total() != n) add("partition total != n");
  if (qp.G.rows() < 1) add("no coupling rows (p must be >= 1)");
  if (!rep.ok()) return rep;

  if (!qp.H.isApprox(qp.H.transpose(), 1e-12)) add("H not symmetric");
  auto [lmin, lmax] = detail::symmetric_eig_range(Mat(0.5 * (qp.H + qp.H.transpose())));
  (void)lmax;
  if (lmin <= kEigTol) add("H not positive definite");

  for (Index j = 0; j < n; ++j) {
    if (qp.box.lb[j] > qp.box.ub[j]) {
      add("box lb > ub at coordinate " + std::to_string(j));
      break;
    }
  }

  for (Index r = 0; r < qp.G.rows(); ++r) {
    if (qp.G.row(r).cwiseAbs().maxCoeff() == 0.0) {
      if (qp.g[r] > 0)
        add("infeasible zero row " + std::to_string(r));
      else
        add("redundant zero row " + std::to_string(r));
    }
  }

  if (qp.sparsity) {
    const auto& sp = *qp.sparsity;
    Index sum = 0;
    for (Index s : sp.row_sizes) sum += s;
    if (sum != qp.G.rows()) add("sparsity row_sizes do not sum to p");
    if (static_cast<Index>(sp.hessian_neighbors.size()) != qp.partition.count() ||
        static_cast<Index>(sp.coupling_row_blocks.size()) != qp.partition.count())
      add("sparsity block lists do not match partition");
  }
  return rep;
}

double objective(const CoupledQP& qp, const Vec& u) {
  check_dim(qp, u);
  return 0.5 * u.dot(qp.H * u) + qp.q.dot(u);
}

Vec constraints(const CoupledQP& qp, const Vec& u) {
  check_dim(qp, u);
  return qp.G * u + qp.g;
}

double violation_norm(const CoupledQP& qp, const Vec& u) {
  return constraints(qp, u).cwiseMax(0.0).norm();
}

double lagrangian(const CoupledQP& qp, const Vec& u, const Vec& lambda) {
  check_lambda(qp, lambda);
  return objective(qp, u) + lambda.dot(constraints(qp, u));
}

Vec lagrangian_gradient(const CoupledQP& qp, const Vec& u, const Vec& lambda) {
  check_dim(qp, u);
  if (lambda.size() != qp.p()) throw std::invalid_argument("dimension mismatch: dim(lambda) != p");
  return qp.H * u + qp.q + qp.G.transpose() * lambda;
}

Vec lagrangian_block_gradient(const CoupledQP& qp, const Vec& u,
                              const Vec& lambda, Index i) {
  check_dim(qp, u);
  if (lambda.size() != qp.p()) throw std::invalid_argument("dimension mismatch: dim(lambda) != p");
  const auto& part = qp.partition;
  if (i < 0 || i >= part.count()) throw std::out_of_range("block index out of range");
  const Index off = part.offset(i);
  const Index ni = part.size(i);

  if (!qp.sparsity) {
    return qp.H.middleRows(off, ni) * u + qp.q.segment(off, ni) +
           qp.G.middleCols(off, ni).transpose() * lambda;
  }

  const auto& sp = *qp.sparsity;
  Vec grad = qp.q.segment(off, ni);
  for (Index j : sp.hessian_neighbors[static_cast<size_t>(i)]) {
    grad.noalias() +=
        qp.H.block(off, part.offset(j), ni, part.size(j)) * u.segment(part.offset(j), part.size(j));
  }
  const auto row_off = sp.row_offsets();
  for (Index r : sp.coupling_row_blocks[static_cast<size_t>(i)]) {
    const Index ro = row_off[static_cast<size_t>(r)];
    const Index rs = sp.row_sizes[static_cast<size_t>(r)];
    grad.noalias() += qp.G.block(ro, off, rs, ni).transpose() * lambda.segment(ro, rs);
  }
  return grad;
}

ProblemConstants constants(const CoupledQP& qp) {
  ProblemConstants c;
  auto [lmin, lmax] = detail::symmetric_eig_range(qp.H);
  if (lmin <= kEigTol) throw std::invalid_argument("constants: H not positive definite");
  c.sigma_F = lmin;
  c.L_glob = lmax;

  const double g2 = detail::spectral_norm(qp.G);
  c.L_d_exact = g2 * g2 / c.sigma_F;
  c.L_d_frobenius = qp.G.squaredNorm() / c.sigma_F;

  const auto& part = qp.partition;
  c.block_count = part.count();
  c.L_blocks = Vec(part.count());
  for (Index i = 0; i < part.count(); ++i) {
    const Mat Hii = qp.H.block(part.offset(i), part.offset(i), part.size(i), part.size(i));
    c.L_blocks[i] = detail::symmetric_eig_range(Hii).second;
  }
  c.L_max = c.L_blocks.maxCoeff();
  c.sigma_1 = c.sigma_F / c.L_max;
  c.D_U = qp.box.diameter();
  c.diam_finite = std::isfinite(c.D_U);
  return c;
}

double slater_dual_bound(const CoupledQP& qp, const Vec& u_tilde,
                         const Vec& lambda_tilde, double d_at_lambda_tilde) {
  check_lambda(qp, lambda_tilde);
  if (!qp.box.contains(u_tilde, 1e-12))
    throw std::invalid_argument("slater_dual_bound: u_tilde outside box");
  const Vec h = constraints(qp, u_tilde);
  const double slack = -h.maxCoeff();
  if (slack <= 0)
    throw std::invalid_argument("slater_dual_bound: u_tilde is not a strict Slater vector");
  return (objective(qp, u_tilde) - d_at_lambda_tilde) / slack;
}

}  // namespace ddqp
