#include "ntk/bn_kernels.hpp"

#include <cmath>
#include <span>
#include <vector>

#include "ntk/errors.hpp"
#include "ntk/gauss.hpp"

namespace ntk {

Matrix centering(int b) {
  return Matrix::Identity(b, b) -
         Matrix::Constant(b, b, 1.0 / static_cast<double>(b));
}

namespace {

double relu_pair(double kii, double kjj, double kij) {
  Matrix m(2, 2);
  m << kii, kij, kij, kjj;
  return vt_relu(m).v;
}

// Entrywise relu kernel map reading K as an unconstrained square matrix:
// V_ij = v(K_ii, K_jj, K_ij).
Matrix relu_map_unconstrained(const Matrix& k) {
  const Eigen::Index b = k.rows();
  Matrix v(b, b);
  for (Eigen::Index i = 0; i < b; ++i)
    for (Eigen::Index j = 0; j < b; ++j)
      v(i, j) = relu_pair(k(i, i), k(j, j), k(i, j));
  return v;
}

Matrix sym(const Matrix& a) { return (a + a.transpose()) / 2.0; }

// Panel boundaries on (0,1), geometrically refined toward both ends.
std::vector<double> graded_cuts(int m) {
  std::vector<double> cuts;
  for (int k = m; k >= 1; --k) cuts.push_back(std::ldexp(1.0, -k));
  for (int k = 2; k <= m; ++k) cuts.push_back(1.0 - std::ldexp(1.0, -k));
  return cuts;
}

struct HalfLineNode {
  double s;
  double w;
};

// Eigen-based evaluation of K(s) = Sg (I + 2 s Sg)^{-1} and
// logdet(I + 2 s Sg), stable for huge s.
struct CenteredEig {
  Matrix q;
  Vector lambda;

  explicit CenteredEig(const Matrix& sg) {
    Eigen::SelfAdjointEigenSolver<Matrix> es(sg);
    q = es.eigenvectors();
    lambda = es.eigenvalues().cwiseMax(0.0);
  }
  Matrix shrink(double s) const {
    Vector d(lambda.size());
    for (Eigen::Index i = 0; i < lambda.size(); ++i)
      d(i) = lambda(i) / (1.0 + 2.0 * s * lambda(i));
    return q * d.asDiagonal() * q.transpose();
  }
  double logdet(double s) const {
    double acc = 0.0;
    for (Eigen::Index i = 0; i < lambda.size(); ++i)
      acc += std::log1p(2.0 * s * lambda(i));
    return acc;
  }
};

// logdet(I + 2 Omega) and Pi = D^{-1/2} Omega (I + 2 Omega)^{-1} D^{-1/2}
// for the joint centered matrix; uses an eigendecomposition of
// D^{1/2} C D^{1/2} per node.
struct JointNode {
  double logdet;
  Matrix pi;
};

JointNode joint_node(const Matrix& c, const Vector& droot, const Vector& dinv) {
  const Matrix omega = droot.asDiagonal() * c * droot.asDiagonal();
  Eigen::SelfAdjointEigenSolver<Matrix> es(omega);
  const Vector lam = es.eigenvalues().cwiseMax(0.0);
  JointNode out;
  out.logdet = 0.0;
  Vector d(lam.size());
  for (Eigen::Index i = 0; i < lam.size(); ++i) {
    out.logdet += std::log1p(2.0 * lam(i));
    d(i) = lam(i) / (1.0 + 2.0 * lam(i));
  }
  const Matrix shr =
      es.eigenvectors() * d.asDiagonal() * es.eigenvectors().transpose();
  out.pi = dinv.asDiagonal() * shr * dinv.asDiagonal();
  out.pi = (out.pi + out.pi.transpose()) / 2.0;
  return out;
}

// Nodes for integral over s in (0, inf) via s = (u/(1-u))^2; the squared map
// absorbs the s^{-1/2} endpoint behavior of these integrands.
std::vector<HalfLineNode> half_line_nodes(int nodes, int panels,
                                          double damp_rate) {
  const std::vector<double> cuts = graded_cuts(panels);
  const Quad1d& q = gauss_legendre(nodes);
  std::vector<HalfLineNode> grid;
  grid.reserve(nodes * (cuts.size() - 1));
  for (size_t p = 0; p + 1 < cuts.size(); ++p) {
    const double a = cuts[p], b = cuts[p + 1];
    const double half = 0.5 * (b - a), mid = 0.5 * (a + b);
    for (int i = 0; i < nodes; ++i) {
      const double u = mid + half * q.nodes[i];
      const double r = u / (1.0 - u);
      const double s = r * r;
      if (s * damp_rate > 60.0) continue;  // integrand weight below 1e-26
      const double jac = 2.0 * u / std::pow(1.0 - u, 3);
      grid.push_back({s, half * q.weights[i] * jac});
    }
  }
  return grid;
}

Matrix integrate_half_line(const std::function<Matrix(double)>& f, int rows,
                           int cols, const BnQuadConfig& cfg,
                           double damp_rate = 0.0) {
  Matrix prev;
  for (int nodes = cfg.base_nodes; nodes <= cfg.max_nodes; nodes *= 2) {
    Matrix acc = Matrix::Zero(rows, cols);
    for (const auto& n : half_line_nodes(nodes, cfg.graded_panels, damp_rate))
      acc += n.w * f(n.s);
    if (prev.size() > 0) {
      const double delta = (acc - prev).cwiseAbs().maxCoeff();
      const double scale = std::max(1.0, acc.cwiseAbs().maxCoeff());
      if (delta <= cfg.tol * scale) return acc;
    }
    prev = std::move(acc);
  }
  fail(ErrorCode::QuadratureNoConvergence,
       "half-line integral did not stabilize at " +
           std::to_string(cfg.max_nodes) + " nodes per panel");
}

Matrix integrate_quarter_plane(const std::function<Matrix(double, double)>& f,
                               int rows, int cols, const BnQuadConfig& cfg,
                               double damp_s = 0.0, double damp_t = 0.0) {
  Matrix prev;
  for (int nodes = cfg.base_nodes; nodes <= cfg.max_nodes; nodes *= 2) {
    const auto grid_s = half_line_nodes(nodes, cfg.graded_panels, damp_s);
    const auto grid_t = half_line_nodes(nodes, cfg.graded_panels, damp_t);
    Matrix acc = Matrix::Zero(rows, cols);
    for (const auto& ns : grid_s)
      for (const auto& nt : grid_t) acc += (ns.w * nt.w) * f(ns.s, nt.s);
    if (prev.size() > 0) {
      const double delta = (acc - prev).cwiseAbs().maxCoeff();
      const double scale = std::max(1.0, acc.cwiseAbs().maxCoeff());
      if (delta <= cfg.tol * scale) return acc;
    }
    prev = std::move(acc);
  }
  fail(ErrorCode::QuadratureNoConvergence,
       "double integral did not stabilize at " + std::to_string(cfg.max_nodes) +
           " nodes per panel");
}

void require_square(const Matrix& m, const char* what) {
  if (m.rows() != m.cols() || m.rows() < 1)
    fail(ErrorCode::BadConfig, std::string(what) + " must be square");
}

constexpr int kMaxClosedFormBatch = 8;

}  // namespace

Matrix vt_relu_jacobian(const Matrix& k, double h) {
  require_square(k, "kernel");
  const int b = static_cast<int>(k.rows());
  const int n2 = b * b;
  Matrix jac(n2, n2);
  Matrix work = k;
  for (int kk = 0; kk < b; ++kk)
    for (int ll = 0; ll < b; ++ll) {
      const int col = kk * b + ll;
      work(kk, ll) = k(kk, ll) + h;
      const Matrix vp = relu_map_unconstrained(work);
      work(kk, ll) = k(kk, ll) - h;
      const Matrix vm = relu_map_unconstrained(work);
      work(kk, ll) = k(kk, ll);
      for (int i = 0; i < b; ++i)
        for (int j = 0; j < b; ++j)
          jac(i * b + j, col) = (vp(i, j) - vm(i, j)) / (2.0 * h);
    }
  if (!jac.allFinite())
    fail(ErrorCode::JacobianIllConditioned, "finite differences overflowed");
  return jac;
}

// Same operator as vt_relu_jacobian(k)^T applied to delta, but exploiting
// the three-entry sparsity of each output's dependence on K.
Matrix vt_relu_jacobian_adjoint(const Matrix& k, const Matrix& delta,
                                double h) {
  const int b = static_cast<int>(k.rows());
  Matrix out = Matrix::Zero(b, b);
  const double inv2h = 1.0 / (2.0 * h);
  for (int i = 0; i < b; ++i) {
    // V_ii = v(K_ii, K_ii, K_ii): perturbing K_ii moves all three slots
    const double dii = (relu_pair(k(i, i) + h, k(i, i) + h, k(i, i) + h) -
                        relu_pair(k(i, i) - h, k(i, i) - h, k(i, i) - h)) *
                       inv2h;
    out(i, i) += delta(i, i) * dii;
    for (int j = 0; j < b; ++j) {
      if (j == i) continue;
      const double kii = k(i, i), kjj = k(j, j), kij = k(i, j);
      const double d_ij =
          (relu_pair(kii, kjj, kij + h) - relu_pair(kii, kjj, kij - h)) * inv2h;
      const double d_ii =
          (relu_pair(kii + h, kjj, kij) - relu_pair(kii - h, kjj, kij)) * inv2h;
      const double d_jj =
          (relu_pair(kii, kjj + h, kij) - relu_pair(kii, kjj - h, kij)) * inv2h;
      out(i, j) += delta(i, j) * d_ij;
      out(i, i) += delta(i, j) * d_ii;
      out(j, j) += delta(i, j) * d_jj;
    }
  }
  if (!out.allFinite())
    fail(ErrorCode::JacobianIllConditioned, "finite differences overflowed");
  return out;
}

Matrix bn_forward_single(const Matrix& sigma, double eps,
                         const BnQuadConfig& cfg) {
  require_square(sigma, "sigma");
  const int b = static_cast<int>(sigma.rows());
  if (b > kMaxClosedFormBatch)
    return bn_forward_single_mc(sigma, eps, 2000000, 0x8f21);
  const Matrix g = centering(b);
  const Matrix sg = sym(g * sigma * g);
  if (eps == 0.0 && sg.cwiseAbs().maxCoeff() < 1e-12)
    fail(ErrorCode::SingularBatch,
         "centered batch covariance vanishes and eps = 0");
  const double damp = static_cast<double>(b) * eps;
  const CenteredEig eig(sg);
  auto f = [&](double s) -> Matrix {
    const Matrix kk = eig.shrink(s);
    const double w = b * std::exp(-s * damp - 0.5 * eig.logdet(s));
    return w * vt_relu_matrix(kk);
  };
  return sym(integrate_half_line(f, b, b, cfg, damp));
}

Matrix bn_forward_cross(const Matrix& sigma, const Matrix& sigma_bar,
                        const Matrix& xi, double eps, const BnQuadConfig& cfg) {
  require_square(sigma, "sigma");
  require_square(sigma_bar, "sigma_bar");
  const int b = static_cast<int>(sigma.rows());
  const int bb = static_cast<int>(sigma_bar.rows());
  if (xi.rows() != b || xi.cols() != bb)
    fail(ErrorCode::BadConfig, "xi must be B x Bbar");
  if (b > kMaxClosedFormBatch || bb > kMaxClosedFormBatch)
    return bn_forward_cross_mc(sigma, sigma_bar, xi, eps, 2000000, 0x8f22);
  const Matrix g = centering(b), gb = centering(bb);
  Matrix joint(b + bb, b + bb);
  joint.topLeftCorner(b, b) = sym(g * sigma * g);
  joint.bottomRightCorner(bb, bb) = sym(gb * sigma_bar * gb);
  joint.topRightCorner(b, bb) = g * xi * gb;
  joint.bottomLeftCorner(bb, b) = joint.topRightCorner(b, bb).transpose();

  const double scale = std::sqrt(static_cast<double>(b) * bb) / M_PI;
  auto f = [&](double s, double t) -> Matrix {
    Vector d(b + bb);
    d.head(b).setConstant(s);
    d.tail(bb).setConstant(t);
    const Vector droot = d.cwiseSqrt();
    const JointNode node = joint_node(joint, droot, droot.cwiseInverse());
    const Matrix v12 = vt_relu_matrix(node.pi).topRightCorner(b, bb);
    const double w = scale / std::sqrt(s * t) *
                     std::exp(-0.5 * node.logdet - s * b * eps - t * bb * eps);
    return w * v12;
  };
  return integrate_quarter_plane(f, b, bb, cfg, b * eps, bb * eps);
}

Matrix bn_backward_single(const Matrix& sigma, const Matrix& delta, double eps,
                          const BnQuadConfig& cfg) {
  require_square(sigma, "sigma");
  require_square(delta, "delta");
  const int b = static_cast<int>(sigma.rows());
  if (delta.rows() != b) fail(ErrorCode::BadConfig, "delta size mismatch");
  if (eps <= 0.0)
    fail(ErrorCode::SingularBatch, "backward map requires eps > 0");
  if (b > kMaxClosedFormBatch)
    return bn_backward_single_mc(sigma, delta, eps, 2000000, 0x8f23);
  const Matrix g = centering(b);
  const Matrix sg = sym(g * sigma * g);
  const double damp = static_cast<double>(b) * eps;
  const CenteredEig eig(sg);
  auto f = [&](double s) -> Matrix {
    const Matrix kk = eig.shrink(s);
    const Matrix jj = vt_relu_jacobian_adjoint(kk, delta);
    const Matrix lam1 = delta.cwiseProduct(vt_step_matrix(kk));
    const double pairing = (delta.cwiseProduct(vt_relu_matrix(kk))).sum();
    const Matrix lam2 = 0.5 * s * s * (pairing * kk + 2.0 * kk * jj * kk);
    const Matrix lam3 = s * (kk * jj + jj * kk);
    const double w = b * std::exp(-s * damp - 0.5 * eig.logdet(s));
    return w * (g * (lam1 + lam2 - lam3) * g);
  };
  return sym(integrate_half_line(f, b, b, cfg, damp));
}

Matrix bn_backward_cross(const Matrix& sigma, const Matrix& sigma_bar,
                         const Matrix& xi, const Matrix& chi, double eps,
                         const BnQuadConfig& cfg) {
  require_square(sigma, "sigma");
  require_square(sigma_bar, "sigma_bar");
  const int b = static_cast<int>(sigma.rows());
  const int bb = static_cast<int>(sigma_bar.rows());
  if (xi.rows() != b || xi.cols() != bb || chi.rows() != b || chi.cols() != bb)
    fail(ErrorCode::BadConfig, "xi/chi must be B x Bbar");
  if (eps <= 0.0)
    fail(ErrorCode::SingularBatch, "backward map requires eps > 0");
  if (b > kMaxClosedFormBatch || bb > kMaxClosedFormBatch)
    return bn_backward_cross_mc(sigma, sigma_bar, xi,
                                Matrix(Matrix::Identity(b, b)),
                                Matrix(Matrix::Identity(bb, bb)), chi, eps,
                                2000000, 0x8f24);

  const Matrix g = centering(b), gb = centering(bb);
  Matrix joint(b + bb, b + bb);
  joint.topLeftCorner(b, b) = sym(g * sigma * g);
  joint.bottomRightCorner(bb, bb) = sym(gb * sigma_bar * gb);
  joint.topRightCorner(b, bb) = g * xi * gb;
  joint.bottomLeftCorner(bb, b) = joint.topRightCorner(b, bb).transpose();

  Matrix chi_pad = Matrix::Zero(b + bb, b + bb);
  chi_pad.topRightCorner(b, bb) = chi;
  chi_pad.bottomLeftCorner(bb, b) = chi.transpose();

  const double scale = std::sqrt(static_cast<double>(b) * bb);
  auto f = [&](double s, double t) -> Matrix {
    Vector d(b + bb);
    d.head(b).setConstant(s);
    d.tail(bb).setConstant(t);
    const Vector droot = d.cwiseSqrt();
    const JointNode node = joint_node(joint, droot, droot.cwiseInverse());
    const Matrix& pi = node.pi;
    const Matrix jj = vt_relu_jacobian_adjoint(pi, chi_pad);
    const Matrix pi12 = pi.topRightCorner(b, bb);
    const Matrix gam1 =
        chi.cwiseProduct(vt_step_matrix(pi).topRightCorner(b, bb));
    const double pairing =
        (vt_relu_matrix(pi).topRightCorner(b, bb).cwiseProduct(chi)).sum();
    const Matrix pjp = pi * jj * pi;
    const Matrix gam2 =
        4.0 * s * t * (pairing * pi12 + pjp.topRightCorner(b, bb));
    const Matrix jp = jj * pi, pj = pi * jj;
    const Matrix gam3 = 2.0 * (t * jp.topRightCorner(b, bb) +
                               s * pj.topRightCorner(b, bb));
    const double gamma = std::exp(-0.5 * node.logdet - s * b * eps -
                                  t * bb * eps) /
                         (M_PI * std::sqrt(s * t));
    return (scale * gamma) * (g * (gam1 + gam2 - gam3) * gb);
  };
  return integrate_quarter_plane(f, b, bb, cfg, b * eps, bb * eps);
}

// ---------------------------------------------------------------------------
// Monte-Carlo references.

void bn_relu_apply(std::span<const double> zeta, double eps,
                   std::vector<double>& out) {
  const int b = static_cast<int>(zeta.size());
  double nu = 0.0;
  for (double z : zeta) nu += z;
  nu /= b;
  double s2 = eps;
  for (double z : zeta) s2 += (z - nu) * (z - nu) / b;
  out.resize(b);
  if (s2 <= 0.0) {
    std::fill(out.begin(), out.end(), 0.0);
    return;
  }
  const double s = std::sqrt(s2);
  for (int i = 0; i < b; ++i) {
    const double t = (zeta[i] - nu) / s;
    out[i] = t > 0 ? t : 0.0;
  }
}

void bn_relu_backward_apply(std::span<const double> dgamma,
                            std::span<const double> zeta, double eps,
                            std::vector<double>& out) {
  const int b = static_cast<int>(zeta.size());
  out.assign(b, 0.0);
  double nu = 0.0;
  for (double z : zeta) nu += z;
  nu /= b;
  double s2 = eps;
  for (double z : zeta) s2 += (z - nu) * (z - nu) / b;
  if (s2 <= 0.0) return;
  const double s = std::sqrt(s2);
  std::vector<double> tilde(b), v(b);
  double dot = 0.0;
  for (int i = 0; i < b; ++i) {
    tilde[i] = (zeta[i] - nu) / s;
    v[i] = dgamma[i] * (tilde[i] > 0 ? 1.0 : 0.0) / s;
    dot += tilde[i] * v[i];
  }
  double mean_w = 0.0;
  for (int i = 0; i < b; ++i) {
    out[i] = v[i] - tilde[i] * dot / b;
    mean_w += out[i];
  }
  mean_w /= b;
  for (int i = 0; i < b; ++i) out[i] -= mean_w;
}

namespace {

Matrix joint_of(const Matrix& sigma, const Matrix& sigma_bar, const Matrix& xi) {
  const int b = static_cast<int>(sigma.rows());
  const int bb = static_cast<int>(sigma_bar.rows());
  Matrix joint(b + bb, b + bb);
  joint.topLeftCorner(b, b) = sigma;
  joint.bottomRightCorner(bb, bb) = sigma_bar;
  joint.topRightCorner(b, bb) = xi;
  joint.bottomLeftCorner(bb, b) = xi.transpose();
  return joint;
}

}  // namespace

Matrix bn_forward_single_mc(const Matrix& sigma, double eps, int64_t samples,
                            uint64_t seed) {
  const int b = static_cast<int>(sigma.rows());
  const Matrix z = gaussian_samples(GaussSpec::zero_mean(sigma), samples, seed);
  Matrix acc = Matrix::Zero(b, b);
  std::vector<double> x;
  for (int64_t s = 0; s < samples; ++s) {
    bn_relu_apply(std::span<const double>(z.col(s).data(), b), eps, x);
    for (int i = 0; i < b; ++i)
      for (int j = 0; j < b; ++j) acc(i, j) += x[i] * x[j];
  }
  return acc / static_cast<double>(samples);
}

Matrix bn_forward_cross_mc(const Matrix& sigma, const Matrix& sigma_bar,
                           const Matrix& xi, double eps, int64_t samples,
                           uint64_t seed) {
  const int b = static_cast<int>(sigma.rows());
  const int bb = static_cast<int>(sigma_bar.rows());
  const Matrix z = gaussian_samples(
      GaussSpec::zero_mean(joint_of(sigma, sigma_bar, xi)), samples, seed);
  Matrix acc = Matrix::Zero(b, bb);
  std::vector<double> x, xb;
  for (int64_t s = 0; s < samples; ++s) {
    bn_relu_apply(std::span<const double>(z.col(s).data(), b), eps, x);
    bn_relu_apply(std::span<const double>(z.col(s).data() + b, bb), eps, xb);
    for (int i = 0; i < b; ++i)
      for (int j = 0; j < bb; ++j) acc(i, j) += x[i] * xb[j];
  }
  return acc / static_cast<double>(samples);
}

Matrix bn_backward_single_mc(const Matrix& sigma, const Matrix& delta,
                             double eps, int64_t samples, uint64_t seed) {
  const int b = static_cast<int>(sigma.rows());
  Matrix joint = Matrix::Zero(2 * b, 2 * b);
  joint.topLeftCorner(b, b) = sigma;
  joint.bottomRightCorner(b, b) = delta;
  const Matrix z = gaussian_samples(GaussSpec::zero_mean(joint), samples, seed);
  Matrix acc = Matrix::Zero(b, b);
  std::vector<double> dh;
  for (int64_t s = 0; s < samples; ++s) {
    std::span<const double> zeta(z.col(s).data(), b);
    std::span<const double> dgamma(z.col(s).data() + b, b);
    bn_relu_backward_apply(dgamma, zeta, eps, dh);
    for (int i = 0; i < b; ++i)
      for (int j = 0; j < b; ++j) acc(i, j) += dh[i] * dh[j];
  }
  return acc / static_cast<double>(samples);
}

Matrix bn_backward_cross_mc(const Matrix& sigma, const Matrix& sigma_bar,
                            const Matrix& xi, const Matrix& delta,
                            const Matrix& delta_bar, const Matrix& chi,
                            double eps, int64_t samples, uint64_t seed) {
  const int b = static_cast<int>(sigma.rows());
  const int bb = static_cast<int>(sigma_bar.rows());
  Matrix joint = Matrix::Zero(2 * (b + bb), 2 * (b + bb));
  joint.topLeftCorner(b + bb, b + bb) = joint_of(sigma, sigma_bar, xi);
  joint.bottomRightCorner(b + bb, b + bb) = joint_of(delta, delta_bar, chi);
  const Matrix z = gaussian_samples(GaussSpec::zero_mean(joint), samples, seed);
  Matrix acc = Matrix::Zero(b, bb);
  std::vector<double> dh, dhb;
  for (int64_t s = 0; s < samples; ++s) {
    std::span<const double> zeta(z.col(s).data(), b);
    std::span<const double> zeta_bar(z.col(s).data() + b, bb);
    std::span<const double> dgamma(z.col(s).data() + b + bb, b);
    std::span<const double> dgamma_bar(z.col(s).data() + b + bb + b, bb);
    bn_relu_backward_apply(dgamma, zeta, eps, dh);
    bn_relu_backward_apply(dgamma_bar, zeta_bar, eps, dhb);
    for (int i = 0; i < b; ++i)
      for (int j = 0; j < bb; ++j) acc(i, j) += dh[i] * dhb[j];
  }
  return acc / static_cast<double>(samples);
}

}  // namespace ntk
