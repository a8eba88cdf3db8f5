#pragma once

#include <Eigen/Dense>

#include <limits>
#include <optional>
#include <string>
#include <vector>

namespace ddqp {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;
using Index = Eigen::Index;

inline constexpr double kInf = std::numeric_limits<double>::infinity();

/// Partition of the decision vector into M contiguous blocks.
class BlockPartition {
public:
  BlockPartition() = default;
  explicit BlockPartition(std::vector<Index> sizes);

  /// M blocks of equal size.
  static BlockPartition uniform(Index block_count, Index block_size);
  /// A single block covering the whole vector.
  static BlockPartition single(Index n);

  Index count() const { return static_cast<Index>(sizes_.size()); }
  Index total() const { return total_; }
  Index size(Index i) const { return sizes_.at(static_cast<size_t>(i)); }
  Index offset(Index i) const { return offsets_.at(static_cast<size_t>(i)); }
  const std::vector<Index>& sizes() const { return sizes_; }

private:
  std::vector<Index> sizes_;
  std::vector<Index> offsets_;
  Index total_ = 0;
};

/// Hyperbox lb <= u <= ub; entries may be +-inf.
struct Box {
  Vec lb;
  Vec ub;

  Index dim() const { return lb.size(); }
  bool contains(const Vec& v, double tol = 0.0) const;
  bool bounded() const;
  /// max_{u,v in box} ||u - v|| = ||ub - lb||; inf when unbounded.
  double diameter() const;

  /// [-radius, radius]^n
  static Box centered(Index n, double radius);
};

Vec box_project(const Box& box, const Vec& v);

/// Block-level nonzero structure of H and G. Column blocks follow the
/// primal partition; the rows of G are grouped into row blocks of sizes
/// row_sizes. Used by the neighbor-local gradient evaluation.
struct SparsityPattern {
  std::vector<Index> row_sizes;
  /// per column block i: blocks j with H_ij != 0 (must include i)
  std::vector<std::vector<Index>> hessian_neighbors;
  /// per column block i: row blocks r with G_ri != 0
  std::vector<std::vector<Index>> coupling_row_blocks;

  std::vector<Index> row_offsets() const;
};

/// Strongly convex QP with box set and affine coupling rows:
///   min 1/2 u'Hu + q'u   s.t.  u in box,  Gu + g <= 0.
struct CoupledQP {
  Mat H;
  Vec q;
  Mat G;
  Vec g;
  Box box;
  BlockPartition partition;
  std::optional<SparsityPattern> sparsity;

  Index n() const { return H.rows(); }
  Index p() const { return G.rows(); }
};

struct ValidationReport {
  std::vector<std::string> violations;
  bool ok() const { return violations.empty(); }
  std::string str() const;
};

/// Report-style validation; solvers reject problems with a non-empty report.
ValidationReport validate_problem(const CoupledQP& qp);

double objective(const CoupledQP& qp, const Vec& u);
/// h(u) = Gu + g
Vec constraints(const CoupledQP& qp, const Vec& u);
/// ||[h(u)]_+||
double violation_norm(const CoupledQP& qp, const Vec& u);
double lagrangian(const CoupledQP& qp, const Vec& u, const Vec& lambda);
Vec lagrangian_gradient(const CoupledQP& qp, const Vec& u, const Vec& lambda);
/// Block i of Hu + q + G'lambda; touches only neighbor blocks when a
/// sparsity pattern is present.
Vec lagrangian_block_gradient(const CoupledQP& qp, const Vec& u,
                              const Vec& lambda, Index i);

/// Offline constants consumed by the solvers and their certificates.
struct ProblemConstants {
  double sigma_F = 0;        ///< lambda_min(H)
  double L_glob = 0;         ///< lambda_max(H); Lipschitz constant of the full gradient
  double L_d_exact = 0;      ///< ||G||^2 / sigma_F
  double L_d_frobenius = 0;  ///< ||G||_F^2 / sigma_F
  Vec L_blocks;              ///< L_i = lambda_max(H_ii)
  double L_max = 0;
  double sigma_1 = 0;        ///< sigma_F / L_max, in (0, 1]
  double D_U = 0;            ///< box diameter, may be inf
  bool diam_finite = false;
  Index block_count = 0;
};

ProblemConstants constants(const CoupledQP& qp);

/// Multiplier-norm bound from a strict Slater vector:
///   (F(u_tilde) - d(lambda_tilde)) / min_j { -h_j(u_tilde) }  >=  ||lambda*||.
/// d_at_lambda_tilde is the dual value at lambda_tilde, supplied by the caller.
double slater_dual_bound(const CoupledQP& qp, const Vec& u_tilde,
                         const Vec& lambda_tilde, double d_at_lambda_tilde);

namespace detail {
/// (lambda_min, lambda_max) of a symmetric matrix. Dense solve for
/// n <= 2000, power/inverse iteration above, tolerance 1e-10.
std::pair<double, double> symmetric_eig_range(const Mat& S);
/// 2-norm of a rectangular matrix.
double spectral_norm(const Mat& A);
}  // namespace detail

}  // namespace ddqp
