#include "ddqp/json_io.hpp"

#include <json.hpp>

#include <fstream>
#include <sstream>
#include <stdexcept>

namespace ddqp::io {

using nlohmann::json;

namespace {

json vec_to_json(const Vec& v) {
  json a = json::array();
  for (Index i = 0; i < v.size(); ++i) a.push_back(v[i]);
  return a;
}

json bound_to_json(const Vec& v) {
  json a = json::array();
  for (Index i = 0; i < v.size(); ++i) {
    if (std::isfinite(v[i]))
      a.push_back(v[i]);
    else
      a.push_back(nullptr);
  }
  return a;
}

json mat_to_json(const Mat& m) {
  json rows = json::array();
  for (Index r = 0; r < m.rows(); ++r) {
    json row = json::array();
    for (Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
    rows.push_back(std::move(row));
  }
  return rows;
}

Vec vec_from_json(const json& a) {
  Vec v(static_cast<Index>(a.size()));
  for (size_t i = 0; i < a.size(); ++i) v[static_cast<Index>(i)] = a[i].get<double>();
  return v;
}

Vec bound_from_json(const json& a, double inf_sign) {
  Vec v(static_cast<Index>(a.size()));
  for (size_t i = 0; i < a.size(); ++i) {
    if (a[i].is_null())
      v[static_cast<Index>(i)] = inf_sign * kInf;
    else
      v[static_cast<Index>(i)] = a[i].get<double>();
  }
  return v;
}

Mat mat_from_json(const json& rows) {
  const Index r = static_cast<Index>(rows.size());
  if (r == 0) return Mat(0, 0);
  const Index c = static_cast<Index>(rows[0].size());
  Mat m(r, c);
  for (Index i = 0; i < r; ++i) {
    if (static_cast<Index>(rows[static_cast<size_t>(i)].size()) != c)
      throw std::invalid_argument("json: ragged matrix");
    for (Index j = 0; j < c; ++j)
      m(i, j) = rows[static_cast<size_t>(i)][static_cast<size_t>(j)].get<double>();
  }
  return m;
}

}  // namespace

std::string to_json(const CoupledQP& qp) {
  json j;
  j["n"] = qp.n();
  j["p"] = qp.p();
  j["blocks"] = qp.partition.sizes();
  j["H"] = mat_to_json(qp.H);
  j["q"] = vec_to_json(qp.q);
  j["G"] = mat_to_json(qp.G);
  j["g"] = vec_to_json(qp.g);
  j["lb"] = bound_to_json(qp.box.lb);
  j["ub"] = bound_to_json(qp.box.ub);
  if (qp.sparsity) {
    json sp;
    sp["row_sizes"] = qp.sparsity->row_sizes;
    json hb = json::array();
    for (size_t i = 0; i < qp.sparsity->hessian_neighbors.size(); ++i)
      for (Index jn : qp.sparsity->hessian_neighbors[i])
        hb.push_back(json::array({static_cast<Index>(i), jn}));
    sp["H_blocks"] = std::move(hb);
    json gb = json::array();
    for (size_t i = 0; i < qp.sparsity->coupling_row_blocks.size(); ++i)
      for (Index r : qp.sparsity->coupling_row_blocks[i])
        gb.push_back(json::array({r, static_cast<Index>(i)}));
    sp["G_blocks"] = std::move(gb);
    j["sparsity"] = std::move(sp);
  }
  return j.dump(2);
}

CoupledQP qp_from_json(const std::string& text) {
  const json j = json::parse(text);
  CoupledQP qp;
  qp.H = mat_from_json(j.at("H"));
  qp.q = vec_from_json(j.at("q"));
  qp.G = mat_from_json(j.at("G"));
  qp.g = vec_from_json(j.at("g"));
  qp.box.lb = bound_from_json(j.at("lb"), -1.0);
  qp.box.ub = bound_from_json(j.at("ub"), +1.0);
  qp.partition = BlockPartition(j.at("blocks").get<std::vector<Index>>());
  if (j.contains("n") && j.at("n").get<Index>() != qp.n())
    throw std::invalid_argument("json: declared n does not match H");
  if (j.contains("p") && j.at("p").get<Index>() != qp.p())
    throw std::invalid_argument("json: declared p does not match G");
  if (j.contains("sparsity")) {
    const json& sp = j.at("sparsity");
    SparsityPattern pat;
    pat.row_sizes = sp.at("row_sizes").get<std::vector<Index>>();
    pat.hessian_neighbors.resize(static_cast<size_t>(qp.partition.count()));
    pat.coupling_row_blocks.resize(static_cast<size_t>(qp.partition.count()));
    for (const auto& pr : sp.at("H_blocks"))
      pat.hessian_neighbors.at(pr[0].get<size_t>()).push_back(pr[1].get<Index>());
    for (const auto& pr : sp.at("G_blocks"))
      pat.coupling_row_blocks.at(pr[1].get<size_t>()).push_back(pr[0].get<Index>());
    qp.sparsity = std::move(pat);
  }
  return qp;
}

std::string to_json(const mpc::NetworkSystem& sys) {
  json j;
  j["M"] = sys.M();
  j["coupling"] = sys.mode == mpc::CouplingMode::input_coupled ? "input_coupled" : "general";
  json subs = json::array();
  for (Index i = 0; i < sys.M(); ++i) {
    const auto& s = sys.subsystems[static_cast<size_t>(i)];
    json js;
    js["nx"] = s.nx;
    js["nu"] = s.nu;
    js["neighbors"] = sys.neighbors[static_cast<size_t>(i)];
    json A, B;
    for (const auto& [k, m] : s.A) A[std::to_string(k)] = mat_to_json(m);
    for (const auto& [k, m] : s.B) B[std::to_string(k)] = mat_to_json(m);
    js["A"] = std::move(A);
    js["B"] = std::move(B);
    js["Q"] = mat_to_json(s.Q);
    js["R"] = mat_to_json(s.R);
    js["P"] = mat_to_json(s.P);
    js["x_lb"] = bound_to_json(s.x_box.lb);
    js["x_ub"] = bound_to_json(s.x_box.ub);
    js["u_lb"] = bound_to_json(s.u_box.lb);
    js["u_ub"] = bound_to_json(s.u_box.ub);
    js["xf_lb"] = bound_to_json(s.xf_box.lb);
    js["xf_ub"] = bound_to_json(s.xf_box.ub);
    subs.push_back(std::move(js));
  }
  j["subsystems"] = std::move(subs);
  return j.dump(2);
}

mpc::NetworkSystem system_from_json(const std::string& text) {
  const json j = json::parse(text);
  mpc::NetworkSystem sys;
  sys.mode = j.at("coupling").get<std::string>() == "general"
                 ? mpc::CouplingMode::general
                 : mpc::CouplingMode::input_coupled;
  for (const auto& js : j.at("subsystems")) {
    mpc::Subsystem s;
    s.nx = js.at("nx").get<Index>();
    s.nu = js.at("nu").get<Index>();
    sys.neighbors.push_back(js.at("neighbors").get<std::vector<int>>());
    if (js.contains("A"))
      for (const auto& [k, m] : js.at("A").items()) s.A[std::stoi(k)] = mat_from_json(m);
    if (js.contains("B"))
      for (const auto& [k, m] : js.at("B").items()) s.B[std::stoi(k)] = mat_from_json(m);
    s.Q = mat_from_json(js.at("Q"));
    s.R = mat_from_json(js.at("R"));
    s.P = mat_from_json(js.at("P"));
    s.x_box = Box{bound_from_json(js.at("x_lb"), -1.0), bound_from_json(js.at("x_ub"), +1.0)};
    s.u_box = Box{bound_from_json(js.at("u_lb"), -1.0), bound_from_json(js.at("u_ub"), +1.0)};
    s.xf_box = Box{bound_from_json(js.at("xf_lb"), -1.0), bound_from_json(js.at("xf_ub"), +1.0)};
    sys.subsystems.push_back(std::move(s));
  }
  return sys;
}

std::string to_json(const SolutionFile& s) {
  json j;
  j["u"] = vec_to_json(s.u);
  j["lambda"] = vec_to_json(s.lambda);
  j["objective"] = s.objective;
  j["violation"] = s.violation;
  j["method"] = s.method;
  j["eps_out"] = s.eps_out;
  j["eps_in"] = s.eps_in;
  j["k_out"] = s.k_out;
  return j.dump(2);
}

SolutionFile solution_from_json(const std::string& text) {
  const json j = json::parse(text);
  SolutionFile s;
  s.u = vec_from_json(j.at("u"));
  s.lambda = vec_from_json(j.at("lambda"));
  s.objective = j.value("objective", 0.0);
  s.violation = j.value("violation", 0.0);
  s.method = j.value("method", std::string{});
  s.eps_out = j.value("eps_out", 0.0);
  s.eps_in = j.value("eps_in", 0.0);
  s.k_out = j.value("k_out", 0L);
  return s;
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open file: " + path);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

void write_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write file: " + path);
  out << content;
}

}  // namespace ddqp::io
