#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ntk/gauss.hpp"

namespace ntk {

// Sign-flip metadata used by the dataflow oddness analysis: negating exactly
// the marked vector arguments and scalar parameters negates the output (odd)
// or leaves it unchanged (even). The empty flip is implicitly even.
struct FlipRule {
  uint64_t vec_mask = 0;
  uint64_t scalar_mask = 0;
  bool odd = true;
};

// phi(x; th) = sum_i coef_i(th) x_i + constant(th)
struct LinearStruct {
  std::function<void(std::span<const double> theta, std::span<double> coef,
                     double& constant)>
      fill;
};

// phi(x; th) = coeff(th) * prod_g f_g( sum_{i in args_g} x_i )
struct ProductStruct {
  struct Group {
    std::vector<int> args;
    std::function<FactorFn(std::span<const double> theta)> factor;
  };
  std::vector<Group> groups;
  std::function<double(std::span<const double>)> coeff;  // null -> 1
};

struct NonlinEntry {
  std::string name;
  int vector_arity = 1;
  int scalar_arity = 0;
  // Pure coordinatewise evaluation; deterministic, polynomially bounded
  // (documented contract, not enforced).
  std::function<double(std::span<const double> x, std::span<const double> theta)>
      eval;
  std::string derivative;  // registry name, "" if none
  std::vector<FlipRule> flips;
  VtTag vtransform = VtTag::None;
  bool smooth = true;
  std::optional<LinearStruct> linear;
  std::optional<ProductStruct> product;

  double operator()(std::span<const double> x,
                    std::span<const double> theta = {}) const {
    return eval(x, theta);
  }
};

// Global name -> entry table. Builtins are registered at startup; parameterized
// families (e.g. "act_relu:3", "lincomb:4", "bnrelu_fwd:2:0") materialize
// lazily from their names so that serialized programs resolve anywhere.
class Registry {
 public:
  static Registry& instance();

  const NonlinEntry& get(const std::string& name);
  bool has(const std::string& name);
  void add(NonlinEntry e);

 private:
  Registry();
  std::optional<NonlinEntry> make_family(const std::string& name) const;

  std::mutex mu_;
  std::map<std::string, NonlinEntry> entries_;
};

inline const NonlinEntry& nonlin(const std::string& name) {
  return Registry::instance().get(name);
}

// Single bound factor for 1-argument entries (their product structure with
// scalar parameters substituted). Used for V-transform style kernel maps.
FactorFn entry_factor(const NonlinEntry& e, std::span<const double> theta = {});

// E[e(z1) e(z2)] over z ~ N(0, K) for a scalar entry e: the entrywise kernel
// map of the nonlinearity. Closed form when tagged, else quadrature.
double vt_pair_value(const NonlinEntry& e, const Matrix& k2x2,
                     const ExpectConfig& cfg = {});

// E[e(z; theta)] for an entry over a Gaussian vector of matching arity.
Expectation gauss_expectation(const NonlinEntry& e,
                              std::span<const double> theta,
                              const GaussSpec& spec,
                              const ExpectConfig& cfg = {});

}  // namespace ntk
