#include "ntk/numeric.hpp"

#include <cmath>
#include <map>
#include <mutex>

#include "ntk/errors.hpp"

namespace ntk {

namespace {
constexpr size_t kLeafSize = 128;

double sum_range(const double* xs, size_t n) {
  if (n <= kLeafSize) {
    double acc = 0.0;
    for (size_t i = 0; i < n; ++i) acc += xs[i];
    return acc;
  }
  const size_t half = n / 2;
  return sum_range(xs, half) + sum_range(xs + half, n - half);
}
}  // namespace

double pairwise_sum(std::span<const double> xs) {
  return sum_range(xs.data(), xs.size());
}

double pairwise_mean(std::span<const double> xs) {
  if (xs.empty()) return 0.0;
  return pairwise_sum(xs) / static_cast<double>(xs.size());
}

Matrix pivoted_cholesky(const Matrix& a, double rel_tol) {
  const Eigen::Index n = a.rows();
  Matrix work = (a + a.transpose()) / 2.0;
  Vector diag = work.diagonal();
  const double tol = rel_tol * std::max(diag.sum(), 0.0);

  std::vector<Eigen::Index> perm(n);
  for (Eigen::Index i = 0; i < n; ++i) perm[i] = i;
  Matrix l = Matrix::Zero(n, n);

  Eigen::Index rank = 0;
  for (Eigen::Index k = 0; k < n; ++k) {
    Eigen::Index pivot = k;
    for (Eigen::Index i = k + 1; i < n; ++i)
      if (diag(perm[i]) > diag(perm[pivot])) pivot = i;
    std::swap(perm[k], perm[pivot]);
    const double d = diag(perm[k]);
    if (d <= tol) {
      if (d < -std::max(tol, 1e-10))
        fail(ErrorCode::NonPsdCovariance,
             "negative pivot " + std::to_string(d) + " in Cholesky");
      break;
    }
    const double root = std::sqrt(d);
    l(perm[k], rank) = root;
    for (Eigen::Index i = k + 1; i < n; ++i) {
      const Eigen::Index r = perm[i];
      double v = work(r, perm[k]);
      for (Eigen::Index j = 0; j < rank; ++j) v -= l(r, j) * l(perm[k], j);
      l(r, rank) = v / root;
      diag(r) -= l(r, rank) * l(r, rank);
    }
    ++rank;
  }
  return l.leftCols(rank);
}

double min_eigenvalue(const Matrix& a) {
  if (a.rows() == 0) return 0.0;
  Eigen::SelfAdjointEigenSolver<Matrix> es((a + a.transpose()) / 2.0,
                                           Eigen::EigenvaluesOnly);
  return es.eigenvalues().minCoeff();
}

Matrix clip_psd(const Matrix& a, double /*tol*/) {
  Matrix sym = (a + a.transpose()) / 2.0;
  Eigen::SelfAdjointEigenSolver<Matrix> es(sym);
  Vector ev = es.eigenvalues().cwiseMax(0.0);
  return es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
}

bool is_symmetric(const Matrix& a, double tol) {
  if (a.rows() != a.cols()) return false;
  return (a - a.transpose()).cwiseAbs().maxCoeff() <= tol;
}

namespace {

Quad1d make_gauss_legendre(int n) {
  Quad1d q;
  q.nodes.resize(n);
  q.weights.resize(n);
  for (int i = 0; i < (n + 1) / 2; ++i) {
    // Newton from the Chebyshev-like initial guess.
    double x = std::cos(M_PI * (i + 0.75) / (n + 0.5));
    double dp = 0.0;
    for (int iter = 0; iter < 100; ++iter) {
      double p0 = 1.0, p1 = x;
      for (int k = 2; k <= n; ++k) {
        const double p2 = ((2 * k - 1) * x * p1 - (k - 1) * p0) / k;
        p0 = p1;
        p1 = p2;
      }
      dp = n * (x * p1 - p0) / (x * x - 1.0);
      const double dx = p1 / dp;
      x -= dx;
      if (std::fabs(dx) < 1e-15) break;
    }
    q.nodes[i] = -x;
    q.nodes[n - 1 - i] = x;
    const double w = 2.0 / ((1.0 - x * x) * dp * dp);
    q.weights[i] = w;
    q.weights[n - 1 - i] = w;
  }
  if (n % 2 == 1) q.nodes[n / 2] = 0.0;
  return q;
}

Quad1d make_gauss_hermite(int n) {
  // Golub-Welsch on the symmetric tridiagonal Jacobi matrix.
  Matrix jac = Matrix::Zero(n, n);
  for (int i = 1; i < n; ++i) {
    const double b = std::sqrt(i / 2.0);
    jac(i, i - 1) = b;
    jac(i - 1, i) = b;
  }
  Eigen::SelfAdjointEigenSolver<Matrix> es(jac);
  Quad1d q;
  q.nodes.resize(n);
  q.weights.resize(n);
  const double mu0 = std::sqrt(M_PI);
  for (int i = 0; i < n; ++i) {
    q.nodes[i] = es.eigenvalues()(i);
    const double v = es.eigenvectors()(0, i);
    q.weights[i] = mu0 * v * v;
  }
  return q;
}

}  // namespace

const Quad1d& gauss_legendre(int n) {
  static std::mutex mu;
  static std::map<int, Quad1d> cache;
  std::lock_guard<std::mutex> lock(mu);
  auto it = cache.find(n);
  if (it == cache.end()) it = cache.emplace(n, make_gauss_legendre(n)).first;
  return it->second;
}

const Quad1d& gauss_hermite(int n) {
  static std::mutex mu;
  static std::map<int, Quad1d> cache;
  std::lock_guard<std::mutex> lock(mu);
  auto it = cache.find(n);
  if (it == cache.end()) it = cache.emplace(n, make_gauss_hermite(n)).first;
  return it->second;
}

}  // namespace ntk
