#include "ntk/limit.hpp"

#include <algorithm>
#include <cmath>

#include "ntk/bn_kernels.hpp"
#include "ntk/errors.hpp"

namespace ntk {

double LimitState::mean_of(VarId g) const {
  auto it = mu.find(g.index);
  return it == mu.end() ? 0.0 : it->second;
}

double LimitState::sigma(VarId a, VarId b) const {
  auto ia = block_of.find(a.index);
  auto ib = block_of.find(b.index);
  if (ia == block_of.end() || ib == block_of.end())
    fail(ErrorCode::UseBeforeDef, "covariance of a var with no limit entry");
  if (ia->second != ib->second) return 0.0;
  const Block& blk = blocks[ia->second];
  return blk.cov(pos_in_block.at(a.index), pos_in_block.at(b.index));
}

double LimitState::theta_of(VarId c) const {
  auto it = theta.find(c.index);
  if (it == theta.end())
    fail(ErrorCode::UseBeforeDef, "scalar has no computed limit");
  return it->second;
}

nlohmann::ordered_json LimitState::to_json(const Program& p) const {
  nlohmann::ordered_json j;
  j["mu"] = nlohmann::ordered_json::object();
  for (const auto& [idx, v] : mu) j["mu"][std::to_string(idx)] = v;
  j["theta"] = nlohmann::ordered_json::object();
  for (const auto& [idx, v] : theta) j["theta"][std::to_string(idx)] = v;
  j["blocks"] = nlohmann::ordered_json::array();
  for (const auto& blk : blocks) {
    nlohmann::ordered_json b;
    b["key"] = blk.key;
    b["members"] = blk.members;
    j["blocks"].push_back(b);
  }
  j["sigma"] = nlohmann::ordered_json::array();
  for (const auto& blk : blocks)
    for (size_t i = 0; i < blk.members.size(); ++i)
      for (size_t k = 0; k <= i; ++k)
        j["sigma"].push_back({{"a", blk.members[i]},
                              {"b", blk.members[k]},
                              {"value", blk.cov(i, k)}});
  (void)p;
  return j;
}

namespace {

// ---------------------------------------------------------------------------
// Symbolic expressions for vector vars over the program's G-vars.

struct LinForm {
  std::vector<std::pair<uint32_t, double>> terms;  // sorted, coalesced
  double cst = 0.0;

  void add(uint32_t idx, double c) {
    if (c == 0.0) return;
    auto it = std::lower_bound(
        terms.begin(), terms.end(), idx,
        [](const auto& t, uint32_t v) { return t.first < v; });
    if (it != terms.end() && it->first == idx)
      it->second += c;
    else
      terms.insert(it, {idx, c});
  }
  void add_scaled(const LinForm& o, double c) {
    for (const auto& t : o.terms) add(t.first, c * t.second);
    cst += c * o.cst;
  }
  bool operator==(const LinForm& o) const {
    return cst == o.cst && terms == o.terms;
  }
};

struct BoundFactor {
  LinForm arg;
  FactorFn fn;
};

struct Expr {
  enum class Kind { Linear, Product, Opaque };
  Kind kind = Kind::Linear;
  LinForm lin;
  std::vector<BoundFactor> factors;
  double coeff = 1.0;
  bool smooth = true;  // opaque only
};

struct BnLineInfo {
  bool backward = false;
  int b = 0;
  int out_coord = 0;
  double eps = 0.0;
  std::vector<uint32_t> grad_args;  // backward only
  std::vector<uint32_t> pre_args;
};

bool parse_bn_line(const Line& l, BnLineInfo& info) {
  const bool fwd = l.fn.rfind("bnrelu_fwd:", 0) == 0;
  const bool bwd = l.fn.rfind("bnrelu_bwd:", 0) == 0;
  if (!fwd && !bwd) return false;
  std::vector<std::string> parts;
  size_t start = 0;
  for (size_t i = 0; i <= l.fn.size(); ++i)
    if (i == l.fn.size() || l.fn[i] == ':') {
      parts.push_back(l.fn.substr(start, i - start));
      start = i + 1;
    }
  info.backward = bwd;
  info.b = std::atoi(parts[1].c_str());
  info.out_coord = std::atoi(parts[2].c_str());
  info.eps = parts.size() > 3 ? std::atof(parts[3].c_str()) : 0.0;
  const size_t half = bwd ? info.b : 0;
  for (size_t i = 0; i < half; ++i) info.grad_args.push_back(l.args[i].index);
  for (size_t i = half; i < l.args.size(); ++i)
    info.pre_args.push_back(l.args[i].index);
  return true;
}

}  // namespace

namespace detail {

class LimitEngine {
 public:
  LimitEngine(const Program& p, const LimitState& s, ExpectConfig cfg)
      : p_(p), s_(s), cfg_(cfg), exprs_(p.var_count()) {}

  // E[Z^a Z^b] for vector vars a, b.
  Expectation pair_moment(VarId a, VarId b) {
    if (auto e = bn_pair(a, b)) return *e;
    const Expr& ea = expr(a.index);
    const Expr& eb = expr(b.index);
    if (ea.kind == Expr::Kind::Opaque || eb.kind == Expr::Kind::Opaque)
      return opaque_pair(a, b);
    if (ea.kind == Expr::Kind::Linear && eb.kind == Expr::Kind::Linear) {
      Expectation out;
      out.value = lin_cov(ea.lin, eb.lin) + lin_mean(ea.lin) * lin_mean(eb.lin);
      return out;
    }
    std::vector<BoundFactor> factors;
    double coeff = 1.0;
    append_factors(ea, factors, coeff);
    append_factors(eb, factors, coeff);
    return product_expectation(std::move(factors), coeff);
  }

  // E[Z^a]
  Expectation single_moment(VarId a) {
    const Expr& ea = expr(a.index);
    if (ea.kind == Expr::Kind::Linear) {
      Expectation out;
      out.value = lin_mean(ea.lin);
      return out;
    }
    if (ea.kind == Expr::Kind::Product) {
      std::vector<BoundFactor> factors = ea.factors;
      return product_expectation(std::move(factors), ea.coeff);
    }
    std::vector<uint32_t> deps;
    collect_deps(a.index, deps);
    const bool smooth = ea.smooth;
    return opaque_moment(
        deps,
        [this, a](const std::vector<double>& g,
                  const std::vector<uint32_t>& d) {
          return eval_var(a.index, g, d);
        },
        smooth);
  }

  // limit of a Moment line's output
  Expectation line_moment(const Line& l) {
    const NonlinEntry& e = Registry::instance().get(l.fn);
    std::vector<double> th = thetas(l);
    if (e.vector_arity == 0) {
      Expectation out;
      out.value = e.eval({}, th);
      return out;
    }
    // treat as a temporary H-var expression
    Expr ex = build_apply(e, l, th);
    if (ex.kind == Expr::Kind::Linear) {
      Expectation out;
      out.value = lin_mean(ex.lin);
      return out;
    }
    if (ex.kind == Expr::Kind::Product) {
      std::vector<BoundFactor> factors = ex.factors;
      return product_expectation(std::move(factors), ex.coeff);
    }
    std::vector<uint32_t> deps;
    collect_line_deps(l, deps);
    auto eval = [this, &l, th](const std::vector<double>& g,
                               const std::vector<uint32_t>& d) {
      const NonlinEntry& e2 = Registry::instance().get(l.fn);
      std::vector<double> slice(l.args.size());
      for (size_t i = 0; i < l.args.size(); ++i)
        slice[i] = eval_var(l.args[i].index, g, d);
      return e2.eval(slice, th);
    };
    return opaque_moment(deps, eval, e.smooth);
  }

 private:
  std::vector<double> thetas(const Line& l) const {
    std::vector<double> th(l.scalar_args.size());
    for (size_t i = 0; i < l.scalar_args.size(); ++i)
      th[i] = s_.theta_of(l.scalar_args[i]);
    return th;
  }

  // Expression of the application of entry e to line l's args (theta bound).
  Expr build_apply(const NonlinEntry& e, const Line& l,
                   const std::vector<double>& th) {
    Expr out;
    bool args_linear = true;
    for (VarId a : l.args)
      if (expr(a.index).kind != Expr::Kind::Linear) args_linear = false;
    if (e.linear && args_linear) {
      std::vector<double> coef(e.vector_arity);
      double cst = 0.0;
      e.linear->fill(th, coef, cst);
      out.kind = Expr::Kind::Linear;
      out.lin.cst = cst;
      for (int i = 0; i < e.vector_arity; ++i)
        out.lin.add_scaled(expr(l.args[i].index).lin, coef[i]);
      return out;
    }
    if (e.product && args_linear) {
      out.kind = Expr::Kind::Product;
      out.coeff = e.product->coeff ? e.product->coeff(th) : 1.0;
      for (const auto& g : e.product->groups) {
        BoundFactor f;
        f.fn = g.factor(th);
        for (int i : g.args) f.arg.add_scaled(expr(l.args[i].index).lin, 1.0);
        out.factors.push_back(std::move(f));
      }
      return out;
    }
    out.kind = Expr::Kind::Opaque;
    out.smooth = e.smooth;
    for (VarId a : l.args) {
      const Expr& ae = expr(a.index);
      if (ae.kind == Expr::Kind::Opaque && !ae.smooth) out.smooth = false;
      if (!e.smooth) out.smooth = false;
    }
    return out;
  }

  const Expr& expr(uint32_t idx) {
    if (exprs_[idx]) return *exprs_[idx];
    Expr e;
    const VarKind k = p_.kind(idx);
    if (k == VarKind::G) {
      e.kind = Expr::Kind::Linear;
      e.lin.add(idx, 1.0);
    } else if (k == VarKind::H) {
      const int li = p_.defining_line(VarId{idx, VarKind::H});
      const Line& l = p_.body[li];
      const NonlinEntry& en = Registry::instance().get(l.fn);
      e = build_apply(en, l, thetas(l));
    } else {
      fail(ErrorCode::UseBeforeDef, "expression of a non-vector var");
    }
    exprs_[idx] = std::move(e);
    return *exprs_[idx];
  }

  double lin_mean(const LinForm& f) const {
    double m = f.cst;
    for (const auto& t : f.terms)
      m += t.second * s_.mean_of(VarId{t.first, VarKind::G});
    return m;
  }

  double lin_cov(const LinForm& a, const LinForm& b) const {
    double c = 0.0;
    for (const auto& ta : a.terms)
      for (const auto& tb : b.terms)
        c += ta.second * tb.second *
             s_.sigma(VarId{ta.first, VarKind::G}, VarId{tb.first, VarKind::G});
    return c;
  }

  void append_factors(const Expr& e, std::vector<BoundFactor>& out,
                      double& coeff) {
    if (e.kind == Expr::Kind::Linear) {
      BoundFactor f;
      f.arg = e.lin;
      f.fn = FactorFn::identity();
      out.push_back(std::move(f));
      return;
    }
    coeff *= e.coeff;
    for (const auto& f : e.factors) out.push_back(f);
  }

  Expectation product_expectation(std::vector<BoundFactor> factors,
                                  double coeff) {
    // merge factors sharing the same argument form
    std::vector<BoundFactor> merged;
    for (auto& f : factors) {
      bool found = false;
      for (auto& m : merged)
        if (m.arg == f.arg) {
          m.fn = FactorFn::product(m.fn, f.fn);
          found = true;
          break;
        }
      if (!found) merged.push_back(std::move(f));
    }
    const int m = static_cast<int>(merged.size());
    Vector mean(m);
    Matrix cov(m, m);
    for (int i = 0; i < m; ++i) {
      mean(i) = lin_mean(merged[i].arg);
      for (int j = 0; j <= i; ++j)
        cov(i, j) = cov(j, i) = lin_cov(merged[i].arg, merged[j].arg);
    }
    // split into independent components
    std::vector<int> comp(m, -1);
    int ncomp = 0;
    for (int i = 0; i < m; ++i) {
      if (comp[i] >= 0) continue;
      std::vector<int> stack{i};
      comp[i] = ncomp;
      while (!stack.empty()) {
        const int u = stack.back();
        stack.pop_back();
        for (int v = 0; v < m; ++v)
          if (comp[v] < 0 && cov(u, v) != 0.0) {
            comp[v] = ncomp;
            stack.push_back(v);
          }
      }
      ++ncomp;
    }
    Expectation out;
    out.value = coeff;
    double err_rel = 0.0;
    for (int c = 0; c < ncomp; ++c) {
      std::vector<int> idx;
      for (int i = 0; i < m; ++i)
        if (comp[i] == c) idx.push_back(i);
      const int d = static_cast<int>(idx.size());
      Vector cm(d);
      Matrix cc(d, d);
      std::vector<FactorFn> fns;
      for (int i = 0; i < d; ++i) {
        cm(i) = mean(idx[i]);
        fns.push_back(merged[idx[i]].fn);
        for (int j = 0; j < d; ++j) cc(i, j) = cov(idx[i], idx[j]);
      }
      const Expectation part =
          expect_factor_product(fns, GaussSpec{cm, cc}, cfg_);
      out.value *= part.value;
      if (part.method != Expectation::Method::ClosedForm) {
        out.method = part.method;
        out.quad_order = std::max(out.quad_order, part.quad_order);
        out.mc_samples = std::max(out.mc_samples, part.mc_samples);
        out.mc_seed = part.mc_seed;
      }
      if (part.value != 0.0)
        err_rel += part.error_estimate / std::fabs(part.value);
      else
        err_rel += part.error_estimate;
    }
    out.error_estimate = err_rel * std::fabs(out.value);
    return out;
  }

  // generic evaluation of a vector var given G-var values
  double eval_var(uint32_t idx, const std::vector<double>& gvals,
                  const std::vector<uint32_t>& deps) const {
    const VarKind k = p_.kind(idx);
    if (k == VarKind::G) {
      for (size_t i = 0; i < deps.size(); ++i)
        if (deps[i] == idx) return gvals[i];
      fail(ErrorCode::UseBeforeDef, "G-var missing from dependency set");
    }
    const int li = p_.defining_line(VarId{idx, VarKind::H});
    const Line& l = p_.body[li];
    const NonlinEntry& e = Registry::instance().get(l.fn);
    std::vector<double> slice(l.args.size()), th(l.scalar_args.size());
    for (size_t i = 0; i < l.args.size(); ++i)
      slice[i] = eval_var(l.args[i].index, gvals, deps);
    for (size_t i = 0; i < l.scalar_args.size(); ++i)
      th[i] = s_.theta_of(l.scalar_args[i]);
    return e.eval(slice, th);
  }

  void collect_deps(uint32_t idx, std::vector<uint32_t>& out) const {
    const VarKind k = p_.kind(idx);
    if (k == VarKind::G) {
      if (std::find(out.begin(), out.end(), idx) == out.end())
        out.push_back(idx);
      return;
    }
    const int li = p_.defining_line(VarId{idx, VarKind::H});
    for (VarId a : p_.body[li].args) collect_deps(a.index, out);
  }

  void collect_line_deps(const Line& l, std::vector<uint32_t>& out) const {
    for (VarId a : l.args) collect_deps(a.index, out);
  }

  Expectation opaque_moment(
      const std::vector<uint32_t>& deps,
      const std::function<double(const std::vector<double>&,
                                 const std::vector<uint32_t>&)>& f,
      bool smooth) {
    const int d = static_cast<int>(deps.size());
    Vector mean(d);
    Matrix cov(d, d);
    for (int i = 0; i < d; ++i) {
      mean(i) = s_.mean_of(VarId{deps[i], VarKind::G});
      for (int j = 0; j <= i; ++j)
        cov(i, j) = cov(j, i) = s_.sigma(VarId{deps[i], VarKind::G},
                                          VarId{deps[j], VarKind::G});
    }
    FunctionSpec psi;
    psi.arity = d;
    psi.smooth = smooth;
    std::vector<uint32_t> deps_copy = deps;
    psi.fn = [f, deps_copy](std::span<const double> z) {
      std::vector<double> g(z.begin(), z.end());
      return f(g, deps_copy);
    };
    return gauss_expectation(psi, GaussSpec{mean, cov}, cfg_);
  }

  Expectation opaque_pair(VarId a, VarId b) {
    std::vector<uint32_t> deps;
    collect_deps(a.index, deps);
    collect_deps(b.index, deps);
    const bool smooth =
        expr(a.index).smooth && expr(b.index).smooth;
    auto f = [this, a, b](const std::vector<double>& g,
                          const std::vector<uint32_t>& d) {
      return eval_var(a.index, g, d) * eval_var(b.index, g, d);
    };
    return opaque_moment(deps, f, smooth);
  }

  // exact dispatch for pairs of batchnorm outputs via the kernel integrals;
  // all arguments must reduce to zero-mean linear forms over the G-vars
  std::optional<Expectation> bn_pair(VarId a, VarId b) {
    if (p_.kind(a) != VarKind::H || p_.kind(b) != VarKind::H)
      return std::nullopt;
    const Line& la = p_.body[p_.defining_line(a)];
    const Line& lb = p_.body[p_.defining_line(b)];
    BnLineInfo ia, ib;
    if (!parse_bn_line(la, ia) || !parse_bn_line(lb, ib)) return std::nullopt;
    if (ia.backward != ib.backward || ia.b != ib.b || ia.eps != ib.eps)
      return std::nullopt;

    auto forms_of = [this](const std::vector<uint32_t>& xs,
                           std::vector<LinForm>& out) {
      for (uint32_t x : xs) {
        const Expr& e = expr(x);
        if (e.kind != Expr::Kind::Linear) return false;
        if (lin_mean(e.lin) != 0.0 || e.lin.cst != 0.0) return false;
        out.push_back(e.lin);
      }
      return true;
    };
    std::vector<LinForm> ga, gb, pa, pb;
    if (!forms_of(ia.grad_args, ga) || !forms_of(ib.grad_args, gb) ||
        !forms_of(ia.pre_args, pa) || !forms_of(ib.pre_args, pb))
      return std::nullopt;

    auto cov_of = [this](const std::vector<LinForm>& xs,
                         const std::vector<LinForm>& ys) {
      Matrix c(xs.size(), ys.size());
      for (size_t i = 0; i < xs.size(); ++i)
        for (size_t j = 0; j < ys.size(); ++j)
          c(i, j) = lin_cov(xs[i], ys[j]);
      return c;
    };

    const std::string key =
        (ia.backward ? "b|" : "f|") + std::to_string(ia.eps) + "|" +
        vec_key(ia.grad_args) + "/" + vec_key(ia.pre_args) + "||" +
        vec_key(ib.grad_args) + "/" + vec_key(ib.pre_args);
    auto it = bn_cache_.find(key);
    if (it == bn_cache_.end()) {
      Matrix result;
      if (!ia.backward) {
        if (ia.pre_args == ib.pre_args)
          result = bn_forward_single(cov_of(pa, pa), ia.eps);
        else
          result = bn_forward_cross(cov_of(pa, pa), cov_of(pb, pb),
                                    cov_of(pa, pb), ia.eps);
      } else {
        // gradients must be independent of the pre-activations
        if (cov_of(ga, pa).cwiseAbs().maxCoeff() != 0.0 ||
            cov_of(gb, pb).cwiseAbs().maxCoeff() != 0.0 ||
            cov_of(ga, pb).cwiseAbs().maxCoeff() != 0.0 ||
            cov_of(gb, pa).cwiseAbs().maxCoeff() != 0.0)
          return std::nullopt;
        if (ia.pre_args == ib.pre_args && ia.grad_args == ib.grad_args)
          result =
              bn_backward_single(cov_of(pa, pa), cov_of(ga, ga), ia.eps);
        else
          result = bn_backward_cross(cov_of(pa, pa), cov_of(pb, pb),
                                     cov_of(pa, pb), cov_of(ga, gb), ia.eps);
      }
      it = bn_cache_.emplace(key, std::move(result)).first;
    }
    Expectation out;
    out.value = it->second(ia.out_coord, ib.out_coord);
    return out;
  }

  static std::string vec_key(const std::vector<uint32_t>& v) {
    std::string s;
    for (uint32_t x : v) s += std::to_string(x) + ",";
    return s;
  }

  const Program& p_;
  const LimitState& s_;
  ExpectConfig cfg_;
  std::vector<std::optional<Expr>> exprs_;
  std::map<std::string, Matrix> bn_cache_;
};

}  // namespace detail

using detail::LimitEngine;

namespace {

std::string block_key(const Program& p, const Line& l) {
  return "W" + std::to_string(p.matrix_pos(l.matrix)) +
         (l.transposed ? "T" : "");
}

}  // namespace

LimitState compute_limits(const Program& p, const LimitConfig& cfg) {
  const BpLikeReport report = check_bp_like(p);
  if (report.verdict == BpLikeReport::Verdict::Fail)
    fail(ErrorCode::BpLikeViolation,
         "program failed the structural check: " +
             (report.findings.empty() ? std::string("(no details)")
                                      : report.findings.front().explanation));
  if (report.verdict == BpLikeReport::Verdict::Unknown &&
      !cfg.allow_unknown_bplike)
    fail(ErrorCode::BpLikeViolation,
         "structural check returned Unknown; set allow_unknown_bplike to "
         "proceed");

  LimitState s;
  // input block
  {
    LimitState::Block blk;
    blk.key = "in";
    for (size_t i = 0; i < p.input_vectors.size(); ++i) {
      const uint32_t idx = p.input_vectors[i].index;
      blk.members.push_back(idx);
      blk.args.push_back(idx);
      s.block_of[idx] = 0;
      s.pos_in_block[idx] = static_cast<int>(i);
      if (p.mu_in(static_cast<Eigen::Index>(i)) != 0.0)
        s.mu[idx] = p.mu_in(static_cast<Eigen::Index>(i));
    }
    blk.cov = p.sigma_in;
    s.blocks.push_back(std::move(blk));
  }
  for (const auto& sc : p.scalars) s.theta[sc.id.index] = sc.limit;

  LimitEngine engine(p, s, cfg.expect);
  std::map<std::string, int> block_index;

  for (const auto& l : p.body) {
    switch (l.op) {
      case Line::Op::Nonlin:
        break;
      case Line::Op::Moment:
        s.theta[l.out.index] = engine.line_moment(l).value;
        break;
      case Line::Op::MatMul: {
        const double sigma2 = p.matrix_sigma2(l.matrix);
        const std::string key = block_key(p, l);
        auto it = block_index.find(key);
        if (it == block_index.end()) {
          LimitState::Block blk;
          blk.key = key;
          blk.cov = Matrix::Zero(0, 0);
          s.blocks.push_back(std::move(blk));
          it = block_index.emplace(key, static_cast<int>(s.blocks.size()) - 1)
                   .first;
        }
        LimitState::Block& blk = s.blocks[it->second];
        const int m = static_cast<int>(blk.members.size());
        Vector row(m + 1);
        for (int i = 0; i < m; ++i) {
          const VarId other_arg{blk.args[i], p.kind(blk.args[i])};
          row(i) = sigma2 *
                   engine.pair_moment(VarId{l.arg.index, p.kind(l.arg)},
                                      other_arg)
                       .value;
        }
        row(m) = sigma2 * engine
                              .pair_moment(VarId{l.arg.index, p.kind(l.arg)},
                                           VarId{l.arg.index, p.kind(l.arg)})
                              .value;
        Matrix grown(m + 1, m + 1);
        grown.topLeftCorner(m, m) = blk.cov;
        for (int i = 0; i < m; ++i) {
          grown(m, i) = row(i);
          grown(i, m) = row(i);
        }
        grown(m, m) = row(m);
        // PSD maintenance: clip tiny negatives, reject real violations
        const double lo = min_eigenvalue(grown);
        const double scale = std::max(1.0, grown.diagonal().maxCoeff());
        if (lo < -1e-8 * scale)
          fail(ErrorCode::NonPsdBlock,
               "block " + key + " eigenvalue " + std::to_string(lo));
        if (lo < 0.0) grown = clip_psd(grown, 0.0);
        blk.cov = std::move(grown);
        blk.members.push_back(l.out.index);
        blk.args.push_back(l.arg.index);
        s.block_of[l.out.index] = it->second;
        s.pos_in_block[l.out.index] = m;
        break;
      }
    }
  }
  return s;
}

Expectation evaluate(const ZQuery& q, const Program& p, const LimitState& s,
                     const ExpectConfig& cfg) {
  const int d = static_cast<int>(q.gvars.size());
  Vector mean(d);
  Matrix cov(d, d);
  for (int i = 0; i < d; ++i) {
    if (p.kind(q.gvars[i]) != VarKind::G)
      fail(ErrorCode::ArityMismatch, "query vars must be G-vars");
    mean(i) = s.mean_of(q.gvars[i]);
    for (int j = 0; j <= i; ++j)
      cov(i, j) = cov(j, i) = s.sigma(q.gvars[i], q.gvars[j]);
  }
  return gauss_expectation(q.psi, GaussSpec{mean, cov}, cfg);
}

Expectation limit_inner(const Program& p, const LimitState& s, VarId a,
                        VarId b, const ExpectConfig& cfg) {
  LimitEngine engine(p, s, cfg);
  return engine.pair_moment(a, b);
}

Expectation limit_mean(const Program& p, const LimitState& s, VarId a,
                       const ExpectConfig& cfg) {
  LimitEngine engine(p, s, cfg);
  return engine.single_moment(a);
}

struct PairEvaluator::Impl {
  Impl(const Program& p, const LimitState& s, const ExpectConfig& cfg)
      : engine(p, s, cfg) {}
  LimitEngine engine;
};

PairEvaluator::PairEvaluator(const Program& p, const LimitState& s,
                             const ExpectConfig& cfg)
    : impl_(std::make_unique<Impl>(p, s, cfg)) {}
PairEvaluator::~PairEvaluator() = default;
PairEvaluator::PairEvaluator(PairEvaluator&&) noexcept = default;

Expectation PairEvaluator::inner(VarId a, VarId b) {
  return impl_->engine.pair_moment(a, b);
}
Expectation PairEvaluator::mean(VarId a) {
  return impl_->engine.single_moment(a);
}

}  // namespace ntk
