#include "ntk/program.hpp"

#include <algorithm>

#include "ntk/errors.hpp"

namespace ntk {

using json = nlohmann::ordered_json;

const char* var_kind_name(VarKind k) {
  switch (k) {
    case VarKind::G: return "G";
    case VarKind::H: return "H";
    case VarKind::A: return "A";
    case VarKind::C: return "C";
  }
  return "?";
}

const std::string& Program::label(VarId v) const {
  static const std::string empty;
  if (v.index < labels.size() && !labels[v.index].empty())
    return labels[v.index];
  return empty;
}

int Program::input_vector_pos(VarId v) const {
  return v.index < input_vec_pos_.size() ? input_vec_pos_[v.index] : -1;
}
int Program::matrix_pos(VarId v) const {
  return v.index < matrix_pos_.size() ? matrix_pos_[v.index] : -1;
}
int Program::scalar_pos(VarId v) const {
  return v.index < scalar_pos_.size() ? scalar_pos_[v.index] : -1;
}
int Program::defining_line(VarId v) const {
  return v.index < def_line_.size() ? def_line_[v.index] : -1;
}

double Program::matrix_sigma2(VarId m) const {
  const int pos = matrix_pos(m);
  if (pos < 0) fail(ErrorCode::UseBeforeDef, "not an input matrix");
  return matrices[pos].sigma2;
}

void Program::rebuild_index() {
  size_t n = 0;
  auto bump = [&n](VarId v) { n = std::max<size_t>(n, v.index + 1); };
  for (const auto& m : matrices) bump(m.id);
  for (const auto& v : input_vectors) bump(v);
  for (const auto& s : scalars) bump(s.id);
  for (const auto& l : body) bump(l.out);

  kinds_.assign(n, VarKind::G);
  input_vec_pos_.assign(n, -1);
  matrix_pos_.assign(n, -1);
  scalar_pos_.assign(n, -1);
  def_line_.assign(n, -1);

  for (size_t i = 0; i < matrices.size(); ++i) {
    kinds_[matrices[i].id.index] = VarKind::A;
    matrix_pos_[matrices[i].id.index] = static_cast<int>(i);
  }
  for (size_t i = 0; i < input_vectors.size(); ++i) {
    kinds_[input_vectors[i].index] = VarKind::G;
    input_vec_pos_[input_vectors[i].index] = static_cast<int>(i);
  }
  for (size_t i = 0; i < scalars.size(); ++i) {
    kinds_[scalars[i].id.index] = VarKind::C;
    scalar_pos_[scalars[i].id.index] = static_cast<int>(i);
  }
  for (size_t i = 0; i < body.size(); ++i) {
    const Line& l = body[i];
    VarKind k = l.op == Line::Op::MatMul  ? VarKind::G
                : l.op == Line::Op::Nonlin ? VarKind::H
                                           : VarKind::C;
    kinds_[l.out.index] = k;
    def_line_[l.out.index] = static_cast<int>(i);
  }
}

void Program::validate() const {
  const size_t n_inputs =
      matrices.size() + input_vectors.size() + scalars.size();
  const size_t n = n_inputs + body.size();

  std::vector<bool> defined(n, false);
  std::vector<VarKind> kinds(n, VarKind::G);

  auto define = [&](VarId v, VarKind k, const char* what) {
    if (v.index >= n)
      fail(ErrorCode::UseBeforeDef,
           std::string(what) + " id " + std::to_string(v.index) +
               " out of dense range");
    if (defined[v.index])
      fail(ErrorCode::UseBeforeDef,
           std::string(what) + " id " + std::to_string(v.index) +
               " defined twice");
    defined[v.index] = true;
    kinds[v.index] = k;
  };
  auto check_use = [&](VarId v, const char* what) {
    if (v.index >= n || !defined[v.index])
      fail(ErrorCode::UseBeforeDef,
           std::string(what) + " id " + std::to_string(v.index) +
               " used before definition");
    return kinds[v.index];
  };

  for (const auto& m : matrices) {
    if (m.sigma2 <= 0.0)
      fail(ErrorCode::NonPsdInputCovariance, "matrix variance must be positive");
    define(m.id, VarKind::A, "matrix");
  }
  for (const auto& v : input_vectors) define(v, VarKind::G, "input vector");
  for (const auto& s : scalars) define(s.id, VarKind::C, "input scalar");

  const auto k = static_cast<Eigen::Index>(input_vectors.size());
  if (mu_in.size() != k || sigma_in.rows() != k || sigma_in.cols() != k)
    fail(ErrorCode::NonPsdInputCovariance,
         "input mean/covariance dimensions do not match the vector count");
  if (k > 0) {
    if (!is_symmetric(sigma_in, 1e-10))
      fail(ErrorCode::NonPsdInputCovariance, "input covariance not symmetric");
    const double lo = min_eigenvalue(sigma_in);
    if (lo < -1e-10)
      fail(ErrorCode::NonPsdInputCovariance,
           "input covariance has eigenvalue " + std::to_string(lo));
  }

  Registry& reg = Registry::instance();
  for (size_t i = 0; i < body.size(); ++i) {
    const Line& l = body[i];
    const std::string where = "line " + std::to_string(i);
    switch (l.op) {
      case Line::Op::MatMul: {
        const VarKind mk = check_use(l.matrix, where.c_str());
        if (mk != VarKind::A)
          fail(ErrorCode::ArityMismatch, where + ": matmul matrix is not an A-var");
        const VarKind ak = check_use(l.arg, where.c_str());
        if (ak != VarKind::G && ak != VarKind::H)
          fail(ErrorCode::ArityMismatch, where + ": matmul argument is not a vector");
        define(l.out, VarKind::G, where.c_str());
        break;
      }
      case Line::Op::Nonlin:
      case Line::Op::Moment: {
        if (!reg.has(l.fn))
          fail(ErrorCode::UnknownNonlin, where + ": '" + l.fn + "'");
        const NonlinEntry& e = reg.get(l.fn);
        if (static_cast<int>(l.args.size()) != e.vector_arity ||
            static_cast<int>(l.scalar_args.size()) != e.scalar_arity)
          fail(ErrorCode::ArityMismatch,
               where + ": '" + l.fn + "' expects " +
                   std::to_string(e.vector_arity) + "+" +
                   std::to_string(e.scalar_arity) + " args");
        for (VarId a : l.args) {
          const VarKind ak = check_use(a, where.c_str());
          if (ak != VarKind::G && ak != VarKind::H)
            fail(ErrorCode::ArityMismatch,
                 where + ": vector argument has kind " +
                     var_kind_name(ak));
        }
        for (VarId a : l.scalar_args) {
          const VarKind ak = check_use(a, where.c_str());
          if (ak != VarKind::C)
            fail(ErrorCode::ArityMismatch,
                 where + ": scalar argument has kind " + var_kind_name(ak));
        }
        define(l.out, l.op == Line::Op::Nonlin ? VarKind::H : VarKind::C,
               where.c_str());
        break;
      }
    }
  }

  for (VarId v : special_set) {
    if (v.index >= n || !defined[v.index] || kinds[v.index] != VarKind::G)
      fail(ErrorCode::UseBeforeDef, "special-set entry is not a G-var");
  }
}

namespace {
json var_array(const std::vector<VarId>& vs) {
  json a = json::array();
  for (VarId v : vs) a.push_back(v.index);
  return a;
}
}  // namespace

json Program::to_json() const {
  json j;
  j["matrices"] = json::array();
  for (const auto& m : matrices)
    j["matrices"].push_back(json{{"id", m.id.index}, {"sigma2", m.sigma2}});
  json vecs;
  vecs["ids"] = var_array(input_vectors);
  json mu = json::array();
  for (Eigen::Index i = 0; i < mu_in.size(); ++i) mu.push_back(mu_in(i));
  vecs["mu"] = mu;
  json sig = json::array();
  for (Eigen::Index r = 0; r < sigma_in.rows(); ++r) {
    json row = json::array();
    for (Eigen::Index c = 0; c < sigma_in.cols(); ++c)
      row.push_back(sigma_in(r, c));
    sig.push_back(row);
  }
  vecs["Sigma"] = sig;
  j["vectors"] = vecs;
  j["scalars"] = json::array();
  for (const auto& s : scalars) {
    json e{{"id", s.id.index},
           {"limit", s.limit},
           {"rule", s.rule == ScalarRule::Constant ? "constant" : "given-sequence"}};
    if (s.rule == ScalarRule::GivenSequence) e["amplitude"] = s.amplitude;
    j["scalars"].push_back(e);
  }
  j["special_set"] = var_array(special_set);
  j["body"] = json::array();
  for (const auto& l : body) {
    json e;
    switch (l.op) {
      case Line::Op::MatMul:
        e["op"] = "matmul";
        e["matrix"] = l.matrix.index;
        e["transposed"] = l.transposed;
        e["arg"] = l.arg.index;
        break;
      case Line::Op::Nonlin:
      case Line::Op::Moment:
        e["op"] = l.op == Line::Op::Nonlin ? "nonlin" : "moment";
        e["fn"] = l.fn;
        e["args"] = var_array(l.args);
        e["scalar_args"] = var_array(l.scalar_args);
        break;
    }
    e["out"] = l.out.index;
    j["body"].push_back(e);
  }
  return j;
}

Program Program::from_json(const json& j) {
  Program p;
  try {
    for (const auto& m : j.at("matrices"))
      p.matrices.push_back(
          {VarId{m.at("id").get<uint32_t>(), VarKind::A},
           m.at("sigma2").get<double>()});
    const auto& vecs = j.at("vectors");
    for (const auto& id : vecs.at("ids"))
      p.input_vectors.push_back(VarId{id.get<uint32_t>(), VarKind::G});
    const auto& mu = vecs.at("mu");
    p.mu_in.resize(static_cast<Eigen::Index>(mu.size()));
    for (size_t i = 0; i < mu.size(); ++i) p.mu_in(i) = mu[i].get<double>();
    const auto& sig = vecs.at("Sigma");
    p.sigma_in.resize(static_cast<Eigen::Index>(sig.size()),
                      static_cast<Eigen::Index>(sig.size()));
    for (size_t r = 0; r < sig.size(); ++r) {
      if (sig[r].size() != sig.size())
        fail(ErrorCode::NonPsdInputCovariance, "Sigma is not square");
      for (size_t c = 0; c < sig[r].size(); ++c)
        p.sigma_in(r, c) = sig[r][c].get<double>();
    }
    for (const auto& s : j.at("scalars")) {
      InputScalar e;
      e.id = VarId{s.at("id").get<uint32_t>(), VarKind::C};
      e.limit = s.at("limit").get<double>();
      const std::string rule = s.at("rule").get<std::string>();
      if (rule == "constant") {
        e.rule = ScalarRule::Constant;
      } else if (rule == "given-sequence") {
        e.rule = ScalarRule::GivenSequence;
        e.amplitude = s.value("amplitude", 0.0);
      } else {
        fail(ErrorCode::BadConfig, "unknown scalar rule '" + rule + "'");
      }
      p.scalars.push_back(e);
    }
    for (const auto& id : j.at("special_set"))
      p.special_set.push_back(VarId{id.get<uint32_t>(), VarKind::G});
    for (const auto& e : j.at("body")) {
      Line l;
      const std::string op = e.at("op").get<std::string>();
      if (op == "matmul") {
        l.op = Line::Op::MatMul;
        l.matrix = VarId{e.at("matrix").get<uint32_t>(), VarKind::A};
        l.transposed = e.at("transposed").get<bool>();
        l.arg = VarId{e.at("arg").get<uint32_t>(), VarKind::G};
        l.out = VarId{e.at("out").get<uint32_t>(), VarKind::G};
      } else if (op == "nonlin" || op == "moment") {
        l.op = op == "nonlin" ? Line::Op::Nonlin : Line::Op::Moment;
        l.fn = e.at("fn").get<std::string>();
        for (const auto& id : e.at("args"))
          l.args.push_back(VarId{id.get<uint32_t>(), VarKind::H});
        for (const auto& id : e.at("scalar_args"))
          l.scalar_args.push_back(VarId{id.get<uint32_t>(), VarKind::C});
        l.out = VarId{e.at("out").get<uint32_t>(),
                      l.op == Line::Op::Nonlin ? VarKind::H : VarKind::C};
      } else {
        fail(ErrorCode::BadConfig, "unknown op '" + op + "'");
      }
      p.body.push_back(std::move(l));
    }
  } catch (const json::exception& ex) {
    fail(ErrorCode::BadConfig, std::string("program JSON: ") + ex.what());
  }
  p.validate();
  p.rebuild_index();
  // fix up arg kinds now that the index exists
  for (auto& l : p.body) {
    if (l.op == Line::Op::MatMul) {
      l.arg.kind = p.kind(l.arg);
    } else {
      for (auto& a : l.args) a.kind = p.kind(a);
    }
  }
  for (auto& v : p.special_set) v.kind = p.kind(v);
  return p;
}

std::string Program::to_json_string() const { return to_json().dump(); }

Program Program::from_json_string(const std::string& text) {
  json j = json::parse(text, nullptr, true);
  return from_json(j);
}

VarId ProgramBuilder::fresh(VarKind kind, std::string label) {
  const auto index = static_cast<uint32_t>(prog_.labels.size());
  prog_.labels.push_back(std::move(label));
  return VarId{index, kind};
}

VarId ProgramBuilder::add_matrix(double sigma2, std::string label) {
  VarId v = fresh(VarKind::A, std::move(label));
  prog_.matrices.push_back({v, sigma2});
  return v;
}

VarId ProgramBuilder::add_input_vector(std::string label) {
  VarId v = fresh(VarKind::G, std::move(label));
  prog_.input_vectors.push_back(v);
  return v;
}

VarId ProgramBuilder::add_input_scalar(double limit, ScalarRule rule,
                                       double amplitude, std::string label) {
  VarId v = fresh(VarKind::C, std::move(label));
  prog_.scalars.push_back({v, limit, rule, amplitude});
  return v;
}

VarId ProgramBuilder::matmul(VarId matrix, bool transposed, VarId arg,
                             std::string label) {
  Line l;
  l.op = Line::Op::MatMul;
  l.matrix = matrix;
  l.transposed = transposed;
  l.arg = arg;
  l.out = fresh(VarKind::G, std::move(label));
  prog_.body.push_back(std::move(l));
  return prog_.body.back().out;
}

VarId ProgramBuilder::nonlin(const std::string& fn, std::vector<VarId> args,
                             std::vector<VarId> scalar_args, std::string label) {
  Line l;
  l.op = Line::Op::Nonlin;
  l.fn = fn;
  l.args = std::move(args);
  l.scalar_args = std::move(scalar_args);
  l.out = fresh(VarKind::H, std::move(label));
  prog_.body.push_back(std::move(l));
  return prog_.body.back().out;
}

VarId ProgramBuilder::moment(const std::string& fn, std::vector<VarId> args,
                             std::vector<VarId> scalar_args, std::string label) {
  Line l;
  l.op = Line::Op::Moment;
  l.fn = fn;
  l.args = std::move(args);
  l.scalar_args = std::move(scalar_args);
  l.out = fresh(VarKind::C, std::move(label));
  prog_.body.push_back(std::move(l));
  return prog_.body.back().out;
}

void ProgramBuilder::set_special(std::vector<VarId> vars) {
  prog_.special_set = std::move(vars);
}

void ProgramBuilder::set_input_gaussian(Vector mu, Matrix sigma) {
  prog_.mu_in = std::move(mu);
  prog_.sigma_in = std::move(sigma);
}

Program ProgramBuilder::finish() {
  if (prog_.mu_in.size() == 0 && !prog_.input_vectors.empty()) {
    prog_.mu_in = Vector::Zero(prog_.input_vectors.size());
    prog_.sigma_in =
        Matrix::Identity(prog_.input_vectors.size(), prog_.input_vectors.size());
  }
  prog_.validate();
  prog_.rebuild_index();
  return std::move(prog_);
}

Matrix diagonal_covariance(const std::vector<double>& variances) {
  Matrix m = Matrix::Zero(variances.size(), variances.size());
  for (size_t i = 0; i < variances.size(); ++i) m(i, i) = variances[i];
  return m;
}

}  // namespace ntk
