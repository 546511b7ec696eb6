#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ntk/numeric.hpp"

namespace ntk {

// Closed-form kernel-map tags. `Step` doubles as the relu derivative.
enum class VtTag { None, Relu, ReluPrime, Erf, ErfPrime, ExpScale, Step };

struct GaussSpec {
  Vector mean;
  Matrix cov;

  int dim() const { return static_cast<int>(mean.size()); }
  // Symmetry and eigenvalues >= -1e-10 (small negatives are clamped by the
  // samplers/quadrature); throws NonPsdCovariance otherwise.
  void validate() const;

  static GaussSpec zero_mean(Matrix cov);
};

struct ExpectConfig {
  enum class Prefer { Auto, ClosedForm, Quadrature, MonteCarlo };
  Prefer prefer = Prefer::Auto;
  bool allow_closed_form = true;  // disable to force quadrature through everything
  int quad_order = 64;            // nodes per axis / per panel
  int64_t mc_samples = 200000;
  uint64_t mc_seed = 1;
};

struct Expectation {
  enum class Method { ClosedForm, GaussHermite, MonteCarlo };
  double value = 0.0;
  Method method = Method::ClosedForm;
  int quad_order = 0;
  int64_t mc_samples = 0;
  uint64_t mc_seed = 0;
  double error_estimate = 0.0;

  std::string method_name() const;
};

// ---------------------------------------------------------------------------
// Closed-form V-transforms on 2x2 second-moment matrices.

struct VtPair {
  double v;       // E f(z1) f(z2)
  double vprime;  // E f'(z1) f'(z2)
};

// E relu(z1) relu(z2) and E step(z1) step(z2); z ~ N(0, K). A zero diagonal
// entry uses the c := 0 convention (V = 0, Vprime = 1/4).
VtPair vt_relu(const Matrix& k);
// E erf(z1) erf(z2) and E erf'(z1) erf'(z2). Throws SingularVTransform when
// the derivative denominator is not positive.
VtPair vt_erf(const Matrix& k);
// E exp(z1/sigma) exp(z2/sigma).
double vt_exp(const Matrix& k, double sigma);

// Entrywise maps over B x B second-moment matrices (2x2 marginals).
Matrix vt_relu_matrix(const Matrix& k);
Matrix vt_step_matrix(const Matrix& k);

// ---------------------------------------------------------------------------
// Scalar factors: the expectation engine reduces moments to products of
// univariate functions of jointly Gaussian scalars.

using Unary = std::function<double(double)>;

struct FactorFn {
  VtTag tag = VtTag::None;  // closed-form pairing hint
  Unary fn;                 // always callable
  bool smooth = true;
  std::vector<double> breakpoints;  // kink/jump locations
  bool polynomial = false;          // exactly integrated by Gauss-Hermite

  static FactorFn identity();
  static FactorFn square();
  static FactorFn relu();
  static FactorFn step();
  static FactorFn erf_fn();
  static FactorFn erf_prime();
  static FactorFn exp_scale(double sigma);
  static FactorFn custom(Unary f, bool smooth, std::vector<double> breakpoints);

  // Pointwise product f(t) * g(t) on a shared axis.
  static FactorFn product(const FactorFn& a, const FactorFn& b);
};

// E[ prod_i f_i(z_i) ] with z ~ N(spec). Dimensions match: spec.dim() ==
// factors.size(). Uses closed forms when possible, then tensor/iterated
// quadrature (<= 3 axes), then Monte Carlo.
Expectation expect_factor_product(std::span<const FactorFn> factors,
                                  const GaussSpec& spec,
                                  const ExpectConfig& cfg = {});

// ---------------------------------------------------------------------------
// Black-box expectations.

struct FunctionSpec {
  int arity = 1;
  std::function<double(std::span<const double>)> fn;
  bool smooth = false;
  // Optional per-coordinate kink/jump locations; enables quadrature for
  // non-smooth integrands.
  std::vector<std::vector<double>> axis_breakpoints;
  // When arity == 2 and set: psi(z) = f(z1) f(z2) for the tagged f, enabling
  // closed-form dispatch.
  VtTag pair_tag = VtTag::None;
};

Expectation gauss_expectation(const FunctionSpec& psi, const GaussSpec& spec,
                              const ExpectConfig& cfg = {});

// ---------------------------------------------------------------------------
// Shared helpers.

// Lower-triangular factor for sequential conditioning; semidefinite
// directions get zero columns.
Matrix sequential_cholesky(const Matrix& cov, double rel_tol = 1e-12);

// Deterministic Gaussian sampler: sample j of dimension i is
// mean + L * u with u keyed by (seed, j, i).
Matrix gaussian_samples(const GaussSpec& spec, int64_t count, uint64_t seed);

double normal_cdf(double x);
double normal_pdf(double x);

}  // namespace ntk
