#pragma once

#include "ddqp/model.hpp"
#include "ddqp/mpc.hpp"

#include <string>

namespace ddqp::io {

/// Coupled-QP JSON schema:
///   {"n", "p", "blocks": [n_i], "H": [[...]], "q": [...], "G": [[...]],
///    "g": [...], "lb": [...], "ub": [...], "sparsity"?: {...}}
/// Box entries use null for an infinite bound (null in lb is -inf, in ub +inf).
std::string to_json(const CoupledQP& qp);
CoupledQP qp_from_json(const std::string& text);

std::string to_json(const mpc::NetworkSystem& sys);
mpc::NetworkSystem system_from_json(const std::string& text);

struct SolutionFile {
  Vec u;
  Vec lambda;
  double objective = 0;
  double violation = 0;
  std::string method;
  double eps_out = 0;
  double eps_in = 0;
  long k_out = 0;
};
std::string to_json(const SolutionFile& s);
SolutionFile solution_from_json(const std::string& text);

std::string read_file(const std::string& path);
void write_file(const std::string& path, const std::string& content);

}  // namespace ddqp::io
