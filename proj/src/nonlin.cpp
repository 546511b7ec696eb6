#include "ntk/nonlin.hpp"

#include <algorithm>
#include <cmath>

#include "ntk/bn_kernels.hpp"
#include "ntk/errors.hpp"

namespace ntk {

namespace {

uint64_t full_mask(int k) { return k >= 64 ? ~0ull : ((1ull << k) - 1ull); }

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  size_t start = 0;
  for (size_t i = 0; i <= s.size(); ++i) {
    if (i == s.size() || s[i] == sep) {
      out.push_back(s.substr(start, i - start));
      start = i + 1;
    }
  }
  return out;
}

bool to_int(const std::string& s, int& out) {
  if (s.empty()) return false;
  char* end = nullptr;
  const long v = std::strtol(s.c_str(), &end, 10);
  if (end != s.c_str() + s.size()) return false;
  out = static_cast<int>(v);
  return true;
}

bool to_double(const std::string& s, double& out) {
  if (s.empty()) return false;
  char* end = nullptr;
  out = std::strtod(s.c_str(), &end);
  return end == s.c_str() + s.size();
}

double sum_args(std::span<const double> x, int count) {
  double s = 0.0;
  for (int i = 0; i < count; ++i) s += x[i];
  return s;
}

// parity: 0 = neither, 1 = odd, 2 = even
struct BasePhi {
  std::function<double(double)> f;
  std::function<FactorFn()> factor;
  int parity;
  std::string prime;        // registry name of derivative
  int prime_parity;
  std::function<double(double)> fprime;
  std::function<FactorFn()> prime_factor;
};

const std::map<std::string, BasePhi>& base_phis() {
  static const std::map<std::string, BasePhi> table = {
      {"relu",
       {[](double t) { return t > 0 ? t : 0.0; }, &FactorFn::relu, 0, "step", 0,
        [](double t) { return t > 0 ? 1.0 : 0.0; }, &FactorFn::step}},
      {"erf",
       {[](double t) { return std::erf(t); }, &FactorFn::erf_fn, 1,
        "erf_prime", 2,
        [](double t) { return 2.0 / std::sqrt(M_PI) * std::exp(-t * t); },
        &FactorFn::erf_prime}},
      {"id",
       {[](double t) { return t; }, &FactorFn::identity, 1, "const1", 2,
        [](double) { return 1.0; },
        [] {
          return FactorFn::custom([](double) { return 1.0; }, true, {});
        }}},
      {"sq",
       {[](double t) { return t * t; }, &FactorFn::square, 2, "dsq", 1,
        [](double t) { return 2.0 * t; },
        [] {
          FactorFn f = FactorFn::custom([](double t) { return 2.0 * t; }, true, {});
          f.polynomial = true;
          return f;
        }}},
  };
  return table;
}

double layernorm_scale(double var, double eps) {
  const double s2 = var + eps;
  if (s2 < 1e-12)
    fail(ErrorCode::DegenerateVariance,
         "normalization variance " + std::to_string(s2));
  return std::sqrt(s2);
}

void softmax_inplace(std::vector<double>& v) {
  const double m = *std::max_element(v.begin(), v.end());
  double z = 0.0;
  for (auto& x : v) {
    x = std::exp(x - m);
    z += x;
  }
  for (auto& x : v) x /= z;
}

NonlinEntry simple_phi(const std::string& name, const BasePhi& p,
                       VtTag tag, const std::string& derivative) {
  NonlinEntry e;
  e.name = name;
  e.vector_arity = 1;
  auto f = p.f;
  e.eval = [f](std::span<const double> x, std::span<const double>) {
    return f(x[0]);
  };
  e.derivative = derivative;
  e.vtransform = tag;
  FactorFn fac = p.factor();
  e.smooth = fac.smooth;
  if (p.parity == 1) e.flips.push_back({1, 0, true});
  if (p.parity == 2) e.flips.push_back({1, 0, false});
  ProductStruct ps;
  ps.groups.push_back({{0}, [fac](std::span<const double>) { return fac; }});
  e.product = std::move(ps);
  return e;
}

}  // namespace

Registry& Registry::instance() {
  static Registry r;
  return r;
}

bool Registry::has(const std::string& name) {
  std::lock_guard<std::mutex> lock(mu_);
  if (entries_.count(name)) return true;
  auto fam = make_family(name);
  if (!fam) return false;
  entries_.emplace(name, std::move(*fam));
  return true;
}

const NonlinEntry& Registry::get(const std::string& name) {
  std::lock_guard<std::mutex> lock(mu_);
  auto it = entries_.find(name);
  if (it != entries_.end()) return it->second;
  auto fam = make_family(name);
  if (!fam) fail(ErrorCode::UnknownNonlin, "'" + name + "' not registered");
  return entries_.emplace(name, std::move(*fam)).first->second;
}

void Registry::add(NonlinEntry e) {
  std::lock_guard<std::mutex> lock(mu_);
  entries_[e.name] = std::move(e);
}

Registry::Registry() {
  const auto& phis = base_phis();
  entries_.emplace("relu", simple_phi("relu", phis.at("relu"), VtTag::Relu, "step"));
  entries_.emplace("erf", simple_phi("erf", phis.at("erf"), VtTag::Erf, "erf_prime"));
  entries_.emplace("id", simple_phi("id", phis.at("id"), VtTag::None, "const1"));
  entries_.emplace("sq", simple_phi("sq", phis.at("sq"), VtTag::None, "dsq"));

  {
    NonlinEntry e;
    e.name = "step";
    e.eval = [](std::span<const double> x, std::span<const double>) {
      return x[0] > 0 ? 1.0 : 0.0;
    };
    e.vtransform = VtTag::Step;
    e.smooth = false;
    ProductStruct ps;
    ps.groups.push_back({{0}, [](std::span<const double>) { return FactorFn::step(); }});
    e.product = std::move(ps);
    entries_.emplace(e.name, e);
  }
  {
    NonlinEntry e;
    e.name = "erf_prime";
    e.eval = [](std::span<const double> x, std::span<const double>) {
      return 2.0 / std::sqrt(M_PI) * std::exp(-x[0] * x[0]);
    };
    e.vtransform = VtTag::ErfPrime;
    e.flips.push_back({1, 0, false});
    ProductStruct ps;
    ps.groups.push_back(
        {{0}, [](std::span<const double>) { return FactorFn::erf_prime(); }});
    e.product = std::move(ps);
    entries_.emplace(e.name, e);
  }
  {
    NonlinEntry e;
    e.name = "const1";
    e.eval = [](std::span<const double>, std::span<const double>) { return 1.0; };
    e.flips.push_back({1, 0, false});
    LinearStruct ls;
    ls.fill = [](std::span<const double>, std::span<double> coef, double& c) {
      coef[0] = 0.0;
      c = 1.0;
    };
    e.linear = std::move(ls);
    entries_.emplace(e.name, e);
  }
  {
    NonlinEntry e;
    e.name = "dsq";
    e.eval = [](std::span<const double> x, std::span<const double>) {
      return 2.0 * x[0];
    };
    e.flips.push_back({1, 0, true});
    LinearStruct ls;
    ls.fill = [](std::span<const double>, std::span<double> coef, double& c) {
      coef[0] = 2.0;
      c = 0.0;
    };
    e.linear = std::move(ls);
    entries_.emplace(e.name, e);
  }
  {
    // (x - theta)^2, the centered-square moment used by normalization layers
    NonlinEntry e;
    e.name = "sqdev";
    e.scalar_arity = 1;
    e.eval = [](std::span<const double> x, std::span<const double> th) {
      const double d = x[0] - th[0];
      return d * d;
    };
    e.flips.push_back({1, 1, false});
    ProductStruct ps;
    ps.groups.push_back({{0}, [](std::span<const double> th) {
                           const double m = th[0];
                           FactorFn f = FactorFn::custom(
                               [m](double t) { return (t - m) * (t - m); },
                               true, {});
                           f.polynomial = true;
                           return f;
                         }});
    e.product = std::move(ps);
    entries_.emplace(e.name, e);
  }
  {
    // (dy - c*y - a)/sqrt(var + eps): backward of layer normalization,
    // args (dy, y), scalars (c, a, var, eps)
    NonlinEntry e;
    e.name = "lnbwd";
    e.vector_arity = 2;
    e.scalar_arity = 4;
    e.eval = [](std::span<const double> x, std::span<const double> th) {
      const double s = layernorm_scale(th[2], th[3]);
      return (x[0] - th[0] * x[1] - th[1]) / s;
    };
    e.flips.push_back({0b01, 0b0011, true});
    LinearStruct ls;
    ls.fill = [](std::span<const double> th, std::span<double> coef, double& c) {
      const double s = layernorm_scale(th[2], th[3]);
      coef[0] = 1.0 / s;
      coef[1] = -th[0] / s;
      c = -th[1] / s;
    };
    e.linear = std::move(ls);
    entries_.emplace(e.name, e);
  }
  {
    // product of two scalars
    NonlinEntry e;
    e.name = "cprod";
    e.vector_arity = 0;
    e.scalar_arity = 2;
    e.eval = [](std::span<const double>, std::span<const double> th) {
      return th[0] * th[1];
    };
    e.flips.push_back({0, 0b01, true});
    e.flips.push_back({0, 0b10, true});
    e.flips.push_back({0, 0b11, false});
    entries_.emplace(e.name, e);
  }
}

std::optional<NonlinEntry> Registry::make_family(const std::string& name) const {
  const auto parts = split(name, ':');
  const std::string& head = parts[0];
  const auto& phis = base_phis();

  if (head == "exp" && parts.size() == 2) {
    double sigma;
    if (!to_double(parts[1], sigma) || sigma <= 0) return std::nullopt;
    NonlinEntry e;
    e.name = name;
    e.eval = [sigma](std::span<const double> x, std::span<const double>) {
      return std::exp(x[0] / sigma);
    };
    e.vtransform = VtTag::ExpScale;
    e.derivative = "dexp:" + parts[1];
    ProductStruct ps;
    ps.groups.push_back({{0}, [sigma](std::span<const double>) {
                           return FactorFn::exp_scale(sigma);
                         }});
    e.product = std::move(ps);
    return e;
  }
  if (head == "dexp" && parts.size() == 2) {
    double sigma;
    if (!to_double(parts[1], sigma) || sigma <= 0) return std::nullopt;
    NonlinEntry e;
    e.name = name;
    e.eval = [sigma](std::span<const double> x, std::span<const double>) {
      return std::exp(x[0] / sigma) / sigma;
    };
    ProductStruct ps;
    ps.groups.push_back({{0}, [sigma](std::span<const double>) {
                           return FactorFn::custom(
                               [sigma](double t) {
                                 return std::exp(t / sigma) / sigma;
                               },
                               true, {});
                         }});
    e.product = std::move(ps);
    return e;
  }

  if ((head.rfind("act_", 0) == 0 || head.rfind("dact_", 0) == 0) &&
      parts.size() == 2) {
    const bool deriv = head[0] == 'd';
    const std::string phi_name = head.substr(deriv ? 5 : 4);
    auto it = phis.find(phi_name);
    int k;
    if (it == phis.end() || !to_int(parts[1], k)) return std::nullopt;
    const BasePhi& phi = it->second;
    NonlinEntry e;
    e.name = name;
    e.vector_arity = k;
    if (!deriv) {
      if (k < 1) return std::nullopt;
      auto f = phi.f;
      e.eval = [f, k](std::span<const double> x, std::span<const double>) {
        return f(sum_args(x, k));
      };
      FactorFn fac = phi.factor();
      e.smooth = fac.smooth;
      if (phi.parity == 1) e.flips.push_back({full_mask(k), 0, true});
      if (phi.parity == 2) e.flips.push_back({full_mask(k), 0, false});
      ProductStruct ps;
      ProductStruct::Group g;
      for (int i = 0; i < k; ++i) g.args.push_back(i);
      g.factor = [fac](std::span<const double>) { return fac; };
      ps.groups.push_back(std::move(g));
      e.product = std::move(ps);
      if (k == 1) e.vtransform = fac.tag;
    } else {
      // phi'(x_1 + ... + x_{k-1}) * x_k
      if (k < 2) return std::nullopt;
      auto fp = phi.fprime;
      e.eval = [fp, k](std::span<const double> x, std::span<const double>) {
        return fp(sum_args(x, k - 1)) * x[k - 1];
      };
      FactorFn fac = phi.prime_factor();
      e.smooth = fac.smooth;
      const uint64_t firsts = full_mask(k - 1);
      const uint64_t last = 1ull << (k - 1);
      e.flips.push_back({last, 0, true});
      if (phi.prime_parity == 1) {
        e.flips.push_back({firsts, 0, true});
        e.flips.push_back({firsts | last, 0, false});
      } else if (phi.prime_parity == 2) {
        e.flips.push_back({firsts, 0, false});
        e.flips.push_back({firsts | last, 0, true});
      }
      ProductStruct ps;
      ProductStruct::Group g0;
      for (int i = 0; i < k - 1; ++i) g0.args.push_back(i);
      g0.factor = [fac](std::span<const double>) { return fac; };
      ps.groups.push_back(std::move(g0));
      ps.groups.push_back({{k - 1}, [](std::span<const double>) {
                             return FactorFn::identity();
                           }});
      e.product = std::move(ps);
    }
    return e;
  }

  if (head == "sum" && parts.size() == 2) {
    int k;
    if (!to_int(parts[1], k) || k < 1) return std::nullopt;
    NonlinEntry e;
    e.name = name;
    e.vector_arity = k;
    e.eval = [k](std::span<const double> x, std::span<const double>) {
      return sum_args(x, k);
    };
    e.flips.push_back({full_mask(k), 0, true});
    LinearStruct ls;
    ls.fill = [k](std::span<const double>, std::span<double> coef, double& c) {
      for (int i = 0; i < k; ++i) coef[i] = 1.0;
      c = 0.0;
    };
    e.linear = std::move(ls);
    return e;
  }

  if (head == "prod" && parts.size() == 2) {
    int k;
    if (!to_int(parts[1], k) || k < 1 || k > 8) return std::nullopt;
    NonlinEntry e;
    e.name = name;
    e.vector_arity = k;
    e.eval = [k](std::span<const double> x, std::span<const double>) {
      double p = 1.0;
      for (int i = 0; i < k; ++i) p *= x[i];
      return p;
    };
    for (uint64_t m = 1; m < (1ull << k); ++m)
      e.flips.push_back({m, 0, (__builtin_popcountll(m) & 1) == 1});
    ProductStruct ps;
    for (int i = 0; i < k; ++i)
      ps.groups.push_back({{i}, [](std::span<const double>) {
                             return FactorFn::identity();
                           }});
    e.product = std::move(ps);
    return e;
  }

  if (head == "lincomb" && parts.size() == 2) {
    int k;
    if (!to_int(parts[1], k) || k < 1) return std::nullopt;
    NonlinEntry e;
    e.name = name;
    e.vector_arity = k;
    e.scalar_arity = k;
    e.eval = [k](std::span<const double> x, std::span<const double> th) {
      double s = 0.0;
      for (int i = 0; i < k; ++i) s += th[i] * x[i];
      return s;
    };
    // term i flips sign iff exactly one of (x_i, theta_i) flips; the sum is
    // odd when every term flips, even when none does
    if (k <= 10) {
      for (uint64_t vec = 0; vec < (1ull << k); ++vec) {
        e.flips.push_back({vec, vec ^ full_mask(k), true});
        if (vec != 0) e.flips.push_back({vec, vec, false});
      }
    } else {
      e.flips.push_back({full_mask(k), 0, true});
      e.flips.push_back({0, full_mask(k), true});
      e.flips.push_back({full_mask(k), full_mask(k), false});
    }
    LinearStruct ls;
    ls.fill = [k](std::span<const double> th, std::span<double> coef, double& c) {
      for (int i = 0; i < k; ++i) coef[i] = th[i];
      c = 0.0;
    };
    e.linear = std::move(ls);
    return e;
  }

  if (head == "lnfwd" && parts.size() == 2) {
    // (x_1 + ... + x_k - mu)/sqrt(var + eps); scalars (mu, var, eps)
    int k;
    if (!to_int(parts[1], k) || k < 1) return std::nullopt;
    NonlinEntry e;
    e.name = name;
    e.vector_arity = k;
    e.scalar_arity = 3;
    e.eval = [k](std::span<const double> x, std::span<const double> th) {
      return (sum_args(x, k) - th[0]) / layernorm_scale(th[1], th[2]);
    };
    e.flips.push_back({full_mask(k), 0b001, true});
    LinearStruct ls;
    ls.fill = [k](std::span<const double> th, std::span<double> coef, double& c) {
      const double s = layernorm_scale(th[1], th[2]);
      for (int i = 0; i < k; ++i) coef[i] = 1.0 / s;
      c = -th[0] / s;
    };
    e.linear = std::move(ls);
    return e;
  }

  if (head == "cdot" && parts.size() == 2) {
    int t;
    if (!to_int(parts[1], t) || t < 1) return std::nullopt;
    NonlinEntry e;
    e.name = name;
    e.vector_arity = 0;
    e.scalar_arity = 2 * t;
    e.eval = [t](std::span<const double>, std::span<const double> th) {
      double s = 0.0;
      for (int j = 0; j < t; ++j) s += th[j] * th[t + j];
      return s;
    };
    e.flips.push_back({0, full_mask(t), true});
    e.flips.push_back({0, full_mask(t) << t, true});
    e.flips.push_back({0, full_mask(2 * t), false});
    return e;
  }

  if (head == "softmax" && parts.size() == 3) {
    int t, j;
    if (!to_int(parts[1], t) || !to_int(parts[2], j) || t < 1 || j < 0 || j >= t)
      return std::nullopt;
    NonlinEntry e;
    e.name = name;
    e.vector_arity = 0;
    e.scalar_arity = t;
    e.eval = [t, j](std::span<const double>, std::span<const double> th) {
      std::vector<double> v(th.begin(), th.begin() + t);
      softmax_inplace(v);
      return v[j];
    };
    return e;
  }

  if (head == "softmax_grad" && parts.size() == 4) {
    int t, j, l;
    if (!to_int(parts[1], t) || !to_int(parts[2], j) || !to_int(parts[3], l) ||
        t < 1 || j < 0 || j >= t || l < 0 || l >= t)
      return std::nullopt;
    NonlinEntry e;
    e.name = name;
    e.vector_arity = 0;
    e.scalar_arity = t;
    e.eval = [t, j, l](std::span<const double>, std::span<const double> th) {
      std::vector<double> v(th.begin(), th.begin() + t);
      softmax_inplace(v);
      return v[j] * ((j == l ? 1.0 : 0.0) - v[l]);
    };
    return e;
  }

  if ((head == "bnrelu_fwd" || head == "bnrelu_bwd") &&
      (parts.size() == 3 || parts.size() == 4)) {
    int b, i;
    double eps = 0.0;
    if (!to_int(parts[1], b) || !to_int(parts[2], i) || b < 1 || i < 0 || i >= b)
      return std::nullopt;
    if (parts.size() == 4 && !to_double(parts[3], eps)) return std::nullopt;
    NonlinEntry e;
    e.name = name;
    e.smooth = false;
    if (head == "bnrelu_fwd") {
      e.vector_arity = b;
      e.eval = [b, i, eps](std::span<const double> x, std::span<const double>) {
        std::vector<double> out;
        bn_relu_apply(x.subspan(0, b), eps, out);
        return out[i];
      };
    } else {
      e.vector_arity = 2 * b;
      e.eval = [b, i, eps](std::span<const double> x, std::span<const double>) {
        std::vector<double> out;
        bn_relu_backward_apply(x.subspan(0, b), x.subspan(b, b), eps, out);
        return out[i];
      };
      e.flips.push_back({full_mask(b), 0, true});
    }
    return e;
  }

  return std::nullopt;
}

FactorFn entry_factor(const NonlinEntry& e, std::span<const double> theta) {
  if (e.product && e.product->groups.size() == 1 && e.vector_arity == 1)
    return e.product->groups[0].factor(theta);
  if (e.vector_arity != 1)
    fail(ErrorCode::ArityMismatch,
         "'" + e.name + "' is not a scalar nonlinearity");
  auto eval = e.eval;
  std::vector<double> th(theta.begin(), theta.end());
  FactorFn f = FactorFn::custom(
      [eval, th](double t) {
        return eval(std::span<const double>(&t, 1), th);
      },
      e.smooth, {});
  return f;
}

double vt_pair_value(const NonlinEntry& e, const Matrix& k2x2,
                     const ExpectConfig& cfg) {
  const FactorFn f = entry_factor(e);
  const FactorFn fs[2] = {f, f};
  return expect_factor_product(fs, GaussSpec::zero_mean(k2x2), cfg).value;
}

Expectation gauss_expectation(const NonlinEntry& e,
                              std::span<const double> theta,
                              const GaussSpec& spec, const ExpectConfig& cfg) {
  if (spec.dim() != e.vector_arity)
    fail(ErrorCode::ArityMismatch,
         "'" + e.name + "' arity " + std::to_string(e.vector_arity) +
             " vs Gaussian dimension " + std::to_string(spec.dim()));
  if (static_cast<int>(theta.size()) != e.scalar_arity)
    fail(ErrorCode::ArityMismatch, "'" + e.name + "' scalar arity mismatch");

  if (e.vector_arity == 0) {
    Expectation out;
    out.value = e.eval({}, theta);
    return out;
  }
  if (e.linear) {
    std::vector<double> coef(e.vector_arity);
    double cst = 0.0;
    e.linear->fill(theta, coef, cst);
    Expectation out;
    double v = cst;
    for (int i = 0; i < e.vector_arity; ++i) v += coef[i] * spec.mean(i);
    out.value = v;
    return out;
  }
  if (e.product) {
    const auto& groups = e.product->groups;
    const int g = static_cast<int>(groups.size());
    Vector mean(g);
    Matrix cov(g, g);
    std::vector<FactorFn> factors;
    factors.reserve(g);
    for (int a = 0; a < g; ++a) {
      factors.push_back(groups[a].factor(theta));
      double m = 0.0;
      for (int i : groups[a].args) m += spec.mean(i);
      mean(a) = m;
      for (int bidx = 0; bidx <= a; ++bidx) {
        double c = 0.0;
        for (int i : groups[a].args)
          for (int j : groups[bidx].args) c += spec.cov(i, j);
        cov(a, bidx) = cov(bidx, a) = c;
      }
    }
    GaussSpec reduced{std::move(mean), std::move(cov)};
    Expectation out = expect_factor_product(factors, reduced, cfg);
    if (e.product->coeff) out.value *= e.product->coeff(theta);
    return out;
  }
  FunctionSpec psi;
  psi.arity = e.vector_arity;
  psi.smooth = e.smooth;
  auto eval = e.eval;
  std::vector<double> th(theta.begin(), theta.end());
  psi.fn = [eval, th](std::span<const double> x) { return eval(x, th); };
  return gauss_expectation(psi, spec, cfg);
}

}  // namespace ntk
