#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <span>
#include <vector>

namespace ntk {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

// Tree-structured summation; result is independent of chunking done by
// callers as long as they pass the same elements in the same order.
double pairwise_sum(std::span<const double> xs);
double pairwise_mean(std::span<const double> xs);

// Returns L (n x r, r = numerical rank) with L L^T ~= A for PSD A, via
// diagonally pivoted Cholesky. Pivots below `rel_tol * trace(A)` stop the
// factorization. Throws NonPsdCovariance if A has a significantly negative
// pivot.
Matrix pivoted_cholesky(const Matrix& a, double rel_tol = 1e-12);

double min_eigenvalue(const Matrix& a);

// Symmetrizes and clips small negative eigenvalues to zero. Eigenvalues
// below -`tol` are left for the caller to reject.
Matrix clip_psd(const Matrix& a, double tol);

bool is_symmetric(const Matrix& a, double tol = 1e-10);

// Nodes/weights on [-1, 1].
struct Quad1d {
  std::vector<double> nodes;
  std::vector<double> weights;
};

const Quad1d& gauss_legendre(int n);

// Nodes/weights for weight exp(-x^2) on the real line (physicists'
// convention): sum_i w_i f(x_i) ~= integral f(x) exp(-x^2) dx.
const Quad1d& gauss_hermite(int n);

}  // namespace ntk
