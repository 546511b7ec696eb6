#pragma once

#include <cstdint>

#include "ntk/numeric.hpp"

namespace ntk {

// Kernel maps of batchnorm followed by relu, acting on second-moment
// matrices over a batch. `eps` is the variance floor of the normalization;
// the backward maps require eps > 0 (their integrands are not integrable at
// eps = 0 for small batches).

struct BnQuadConfig {
  int base_nodes = 16;    // per panel, doubled until converged
  int max_nodes = 128;
  double tol = 1e-6;      // stop when doubling changes the result less
  int graded_panels = 22; // geometric refinement of u -> 1
};

Matrix centering(int b);  // I - 11^T/B

// Forward, one batch: second-moment matrix of relu(centered/std).
Matrix bn_forward_single(const Matrix& sigma, double eps,
                         const BnQuadConfig& cfg = {});

// Forward, two batches with joint Gaussian [[sigma, xi], [xi^T, sigma_bar]].
Matrix bn_forward_cross(const Matrix& sigma, const Matrix& sigma_bar,
                        const Matrix& xi, double eps,
                        const BnQuadConfig& cfg = {});

// Backward, one batch: gradients dx ~ N(0, delta) independent of the
// pre-activations h ~ N(0, sigma).
Matrix bn_backward_single(const Matrix& sigma, const Matrix& delta, double eps,
                          const BnQuadConfig& cfg = {});

// Backward, two batches: chi holds E dx_i dxbar_j.
Matrix bn_backward_cross(const Matrix& sigma, const Matrix& sigma_bar,
                         const Matrix& xi, const Matrix& chi, double eps,
                         const BnQuadConfig& cfg = {});

// Explicit (B^2)x(B^2) Jacobian of the entrywise relu kernel map, by central
// finite differences with step h.
Matrix vt_relu_jacobian(const Matrix& k, double h = 1e-5);

// adjoint application: J = (dV/dK)^T {delta}
Matrix vt_relu_jacobian_adjoint(const Matrix& k, const Matrix& delta,
                                double h = 1e-5);

// Monte-Carlo references for the four maps (shared by tests and the B > 8
// fallback).
Matrix bn_forward_single_mc(const Matrix& sigma, double eps, int64_t samples,
                            uint64_t seed);
Matrix bn_forward_cross_mc(const Matrix& sigma, const Matrix& sigma_bar,
                           const Matrix& xi, double eps, int64_t samples,
                           uint64_t seed);
Matrix bn_backward_single_mc(const Matrix& sigma, const Matrix& delta,
                             double eps, int64_t samples, uint64_t seed);
Matrix bn_backward_cross_mc(const Matrix& sigma, const Matrix& sigma_bar,
                            const Matrix& xi, const Matrix& delta,
                            const Matrix& delta_bar, const Matrix& chi,
                            double eps, int64_t samples, uint64_t seed);

// Coordinatewise batchnorm+relu maps (shared with the finite interpreter's
// registry entries and the MC references).
void bn_relu_apply(std::span<const double> zeta, double eps,
                   std::vector<double>& out);
void bn_relu_backward_apply(std::span<const double> dgamma,
                            std::span<const double> zeta, double eps,
                            std::vector<double>& out);

}  // namespace ntk
