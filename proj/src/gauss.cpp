#include "ntk/gauss.hpp"

#include <algorithm>
#include <cmath>

#include "ntk/errors.hpp"
#include "ntk/parallel.hpp"
#include "ntk/random.hpp"

namespace ntk {

double normal_cdf(double x) { return 0.5 * std::erfc(-x * M_SQRT1_2); }
double normal_pdf(double x) {
  return std::exp(-0.5 * x * x) / std::sqrt(2.0 * M_PI);
}

void GaussSpec::validate() const {
  if (cov.rows() != cov.cols() || cov.rows() != mean.size())
    fail(ErrorCode::NonPsdCovariance, "covariance/mean dimension mismatch");
  if (!is_symmetric(cov, 1e-10))
    fail(ErrorCode::NonPsdCovariance, "covariance not symmetric");
  if (cov.rows() > 0) {
    const double lo = min_eigenvalue(cov);
    if (lo < -1e-10)
      fail(ErrorCode::NonPsdCovariance,
           "covariance has eigenvalue " + std::to_string(lo));
  }
}

GaussSpec GaussSpec::zero_mean(Matrix cov) {
  GaussSpec s;
  s.mean = Vector::Zero(cov.rows());
  s.cov = std::move(cov);
  return s;
}

std::string Expectation::method_name() const {
  switch (method) {
    case Method::ClosedForm: return "closed-form";
    case Method::GaussHermite:
      return "gauss-hermite(" + std::to_string(quad_order) + ")";
    case Method::MonteCarlo:
      return "monte-carlo(" + std::to_string(mc_samples) + "," +
             std::to_string(mc_seed) + ")";
  }
  return "?";
}

// ---------------------------------------------------------------------------
// Closed forms.

namespace {
double corr_of(const Matrix& k, double* scale = nullptr) {
  const double k11 = std::max(k(0, 0), 0.0);
  const double k22 = std::max(k(1, 1), 0.0);
  const double s = std::sqrt(k11 * k22);
  if (scale) *scale = s;
  if (s == 0.0) return 0.0;  // degenerate-axis convention
  return std::clamp(k(0, 1) / s, -1.0, 1.0);
}
}  // namespace

VtPair vt_relu(const Matrix& k) {
  double scale = 0.0;
  const double c = corr_of(k, &scale);
  VtPair out;
  out.v = (std::sqrt(1.0 - c * c) + (M_PI - std::acos(c)) * c) * scale /
          (2.0 * M_PI);
  out.vprime = (M_PI - std::acos(c)) / (2.0 * M_PI);
  return out;
}

VtPair vt_erf(const Matrix& k) {
  VtPair out;
  const double denom_v = std::sqrt((k(0, 0) + 0.5) * (k(1, 1) + 0.5));
  const double arg = denom_v > 0.0 ? std::clamp(k(0, 1) / denom_v, -1.0, 1.0) : 0.0;
  out.v = 2.0 / M_PI * std::asin(arg);
  const double denom_p =
      (1.0 + 2.0 * k(0, 0)) * (1.0 + 2.0 * k(1, 1)) - 4.0 * k(0, 1) * k(0, 1);
  if (denom_p <= 0.0)
    fail(ErrorCode::SingularVTransform,
         "erf derivative denominator " + std::to_string(denom_p));
  out.vprime = 4.0 / (M_PI * std::sqrt(denom_p));
  return out;
}

double vt_exp(const Matrix& k, double sigma) {
  return std::exp((k(0, 0) + 2.0 * k(0, 1) + k(1, 1)) / (2.0 * sigma * sigma));
}

namespace {
Matrix entrywise_vt(const Matrix& k, bool prime) {
  const Eigen::Index b = k.rows();
  Matrix out(b, b);
  for (Eigen::Index i = 0; i < b; ++i)
    for (Eigen::Index j = 0; j <= i; ++j) {
      Matrix m(2, 2);
      m << k(i, i), k(i, j), k(j, i), k(j, j);
      const VtPair p = vt_relu(m);
      out(i, j) = out(j, i) = prime ? p.vprime : p.v;
    }
  return out;
}
}  // namespace

Matrix vt_relu_matrix(const Matrix& k) { return entrywise_vt(k, false); }
Matrix vt_step_matrix(const Matrix& k) { return entrywise_vt(k, true); }

// ---------------------------------------------------------------------------
// Factors.

FactorFn FactorFn::identity() {
  FactorFn f;
  f.tag = VtTag::None;
  f.fn = [](double t) { return t; };
  f.polynomial = true;
  return f;
}

FactorFn FactorFn::square() {
  FactorFn f;
  f.fn = [](double t) { return t * t; };
  f.polynomial = true;
  return f;
}

FactorFn FactorFn::relu() {
  FactorFn f;
  f.tag = VtTag::Relu;
  f.fn = [](double t) { return t > 0.0 ? t : 0.0; };
  f.smooth = false;
  f.breakpoints = {0.0};
  return f;
}

FactorFn FactorFn::step() {
  FactorFn f;
  f.tag = VtTag::Step;
  f.fn = [](double t) { return t > 0.0 ? 1.0 : 0.0; };
  f.smooth = false;
  f.breakpoints = {0.0};
  return f;
}

FactorFn FactorFn::erf_fn() {
  FactorFn f;
  f.tag = VtTag::Erf;
  f.fn = [](double t) { return std::erf(t); };
  return f;
}

FactorFn FactorFn::erf_prime() {
  FactorFn f;
  f.tag = VtTag::ErfPrime;
  f.fn = [](double t) { return 2.0 / std::sqrt(M_PI) * std::exp(-t * t); };
  return f;
}

FactorFn FactorFn::exp_scale(double sigma) {
  FactorFn f;
  f.tag = VtTag::ExpScale;
  f.fn = [sigma](double t) { return std::exp(t / sigma); };
  return f;
}

FactorFn FactorFn::custom(Unary f, bool smooth, std::vector<double> breakpoints) {
  FactorFn out;
  out.fn = std::move(f);
  out.smooth = smooth;
  out.breakpoints = std::move(breakpoints);
  return out;
}

FactorFn FactorFn::product(const FactorFn& a, const FactorFn& b) {
  FactorFn out;
  auto fa = a.fn, fb = b.fn;
  out.fn = [fa, fb](double t) { return fa(t) * fb(t); };
  out.smooth = a.smooth && b.smooth;
  out.polynomial = a.polynomial && b.polynomial;
  out.breakpoints = a.breakpoints;
  out.breakpoints.insert(out.breakpoints.end(), b.breakpoints.begin(),
                         b.breakpoints.end());
  std::sort(out.breakpoints.begin(), out.breakpoints.end());
  out.breakpoints.erase(
      std::unique(out.breakpoints.begin(), out.breakpoints.end()),
      out.breakpoints.end());
  return out;
}

// ---------------------------------------------------------------------------
// Sequential (fixed-order) Cholesky with zeroed semidefinite directions.

Matrix sequential_cholesky(const Matrix& cov, double rel_tol) {
  const Eigen::Index n = cov.rows();
  const double scale = std::max(cov.diagonal().maxCoeff(), 0.0);
  const double tol = rel_tol * std::max(scale, 1e-300);
  Matrix l = Matrix::Zero(n, n);
  for (Eigen::Index j = 0; j < n; ++j) {
    double d = cov(j, j);
    for (Eigen::Index k = 0; k < j; ++k) d -= l(j, k) * l(j, k);
    if (d <= tol) {
      if (d < -1e-8 * std::max(scale, 1.0))
        fail(ErrorCode::NonPsdCovariance,
             "negative conditional variance " + std::to_string(d));
      continue;  // column stays zero: deterministic direction
    }
    l(j, j) = std::sqrt(d);
    for (Eigen::Index i = j + 1; i < n; ++i) {
      double v = cov(i, j);
      for (Eigen::Index k = 0; k < j; ++k) v -= l(i, k) * l(j, k);
      l(i, j) = v / l(j, j);
    }
  }
  return l;
}

Matrix gaussian_samples(const GaussSpec& spec, int64_t count, uint64_t seed) {
  const int d = spec.dim();
  const Matrix l = pivoted_cholesky(spec.cov);
  const int r = static_cast<int>(l.cols());
  Matrix out(d, count);
  for (int64_t s = 0; s < count; ++s) {
    Vector u(r);
    for (int i = 0; i < r; ++i)
      u(i) = rng::normal(seed, 0x6d63 /*stream*/, static_cast<uint64_t>(s), i);
    out.col(s) = spec.mean + l * u;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Quadrature engines.

namespace {

// Tensorized Gauss-Hermite over the factored directions of cov.
double gh_tensor(const std::function<double(const Vector&)>& f,
                 const GaussSpec& spec, int order) {
  const Matrix l = pivoted_cholesky(spec.cov);
  const int r = static_cast<int>(l.cols());
  const Quad1d& q = gauss_hermite(order);
  const double norm = std::pow(M_PI, -0.5 * r);
  Vector z = spec.mean;
  if (r == 0) return f(z);
  std::vector<int> idx(r, 0);
  double acc = 0.0;
  for (;;) {
    double w = norm;
    Vector u(r);
    for (int i = 0; i < r; ++i) {
      w *= q.weights[idx[i]];
      u(i) = M_SQRT2 * q.nodes[idx[i]];
    }
    z = spec.mean + l * u;
    acc += w * f(z);
    int i = 0;
    for (; i < r; ++i) {
      if (++idx[i] < order) break;
      idx[i] = 0;
    }
    if (i == r) break;
  }
  return acc;
}

struct PanelAxis {
  double lcoef_diag = 0.0;         // L(j,j)
  std::vector<double> lrow;        // L(j, 0..j-1)
  double mean = 0.0;               // mean_j
  std::vector<double> breakpoints; // in the original coordinate z_j
};

// Iterated integration over u-space (z = mean + L u) with per-axis panels
// split at the mapped breakpoints. Spectral inside panels; panel width <= 2.
class PanelIntegrator {
 public:
  PanelIntegrator(std::vector<PanelAxis> axes,
                  std::function<double(const Vector&)> f, int nodes)
      : axes_(std::move(axes)), f_(std::move(f)), nodes_(std::max(8, nodes)) {
    k_ = static_cast<int>(axes_.size());
    u_.resize(k_);
    z_.resize(k_);
  }

  double run() { return recurse(0); }

 private:
  double zval(int j) const {
    double v = axes_[j].mean;
    for (int i = 0; i < j; ++i) v += axes_[j].lrow[i] * u_(i);
    if (axes_[j].lcoef_diag != 0.0) v += axes_[j].lcoef_diag * u_(j);
    return v;
  }

  double recurse(int j) {
    if (j == k_) return f_(z_);
    const PanelAxis& ax = axes_[j];
    if (ax.lcoef_diag == 0.0) {
      u_(j) = 0.0;
      z_(j) = zval(j);
      return recurse(j + 1);
    }
    // panel boundaries in u_j
    double shift = ax.mean;
    for (int i = 0; i < j; ++i) shift += ax.lrow[i] * u_(i);
    std::vector<double> cuts{-kRange, kRange};
    for (double b : ax.breakpoints) {
      const double ustar = (b - shift) / ax.lcoef_diag;
      if (ustar > -kRange && ustar < kRange) cuts.push_back(ustar);
    }
    std::sort(cuts.begin(), cuts.end());
    const Quad1d& q = gauss_legendre(nodes_);
    double acc = 0.0;
    for (size_t p = 0; p + 1 < cuts.size(); ++p) {
      const double lo = cuts[p], hi = cuts[p + 1];
      const int pieces = std::max(1, static_cast<int>(std::ceil((hi - lo) / 2.0)));
      for (int piece = 0; piece < pieces; ++piece) {
        const double a = lo + (hi - lo) * piece / pieces;
        const double b = lo + (hi - lo) * (piece + 1) / pieces;
        const double half = 0.5 * (b - a), mid = 0.5 * (a + b);
        for (int i = 0; i < nodes_; ++i) {
          const double x = mid + half * q.nodes[i];
          u_(j) = x;
          z_(j) = shift + ax.lcoef_diag * x;
          acc += half * q.weights[i] * normal_pdf(x) * recurse(j + 1);
        }
      }
    }
    return acc;
  }

  static constexpr double kRange = 10.0;
  std::vector<PanelAxis> axes_;
  std::function<double(const Vector&)> f_;
  int nodes_;
  int k_ = 0;
  Vector u_, z_;
};

double panel_integrate(const std::function<double(const Vector&)>& f,
                       const GaussSpec& spec,
                       const std::vector<std::vector<double>>& breakpoints,
                       int nodes) {
  const int k = spec.dim();
  const Matrix l = sequential_cholesky(spec.cov);
  std::vector<PanelAxis> axes(k);
  for (int j = 0; j < k; ++j) {
    axes[j].lcoef_diag = l(j, j);
    axes[j].lrow.resize(j);
    for (int i = 0; i < j; ++i) axes[j].lrow[i] = l(j, i);
    axes[j].mean = spec.mean(j);
    if (j < static_cast<int>(breakpoints.size()))
      axes[j].breakpoints = breakpoints[j];
  }
  // cheaper nodes in 3D keeps the total point count bounded
  const int per_axis = k >= 3 ? std::min(nodes, 24) : std::min(nodes, 48);
  return PanelIntegrator(axes, f, per_axis).run();
}

// Monte Carlo with fixed-order chunked reduction; bitwise independent of
// the worker count.
Expectation mc_expectation(const std::function<double(const Vector&)>& f,
                           const GaussSpec& spec, int64_t samples,
                           uint64_t seed) {
  const Matrix l = pivoted_cholesky(spec.cov);
  const int r = static_cast<int>(l.cols());
  constexpr int64_t kChunk = 8192;
  const int64_t chunks = (samples + kChunk - 1) / kChunk;
  std::vector<double> sums(chunks), sqsums(chunks);
  parallel_for(chunks, [&](int64_t c) {
    const int64_t lo = c * kChunk;
    const int64_t hi = std::min(samples, lo + kChunk);
    std::vector<double> vals(hi - lo);
    Vector u(r), z(spec.dim());
    for (int64_t s = lo; s < hi; ++s) {
      for (int i = 0; i < r; ++i)
        u(i) = rng::normal(seed, 0x6d63, static_cast<uint64_t>(s), i);
      z = spec.mean + l * u;
      vals[s - lo] = f(z);
    }
    sums[c] = pairwise_sum(vals);
    for (auto& v : vals) v *= v;
    sqsums[c] = pairwise_sum(vals);
  });
  const double total = pairwise_sum(sums);
  const double total2 = pairwise_sum(sqsums);
  const double mean = total / static_cast<double>(samples);
  double var = total2 / static_cast<double>(samples) - mean * mean;
  if (var < 0.0) var = 0.0;
  Expectation e;
  e.value = mean;
  e.method = Expectation::Method::MonteCarlo;
  e.mc_samples = samples;
  e.mc_seed = seed;
  e.error_estimate = 3.0 * std::sqrt(var / static_cast<double>(samples));
  return e;
}

bool zero_mean(const GaussSpec& spec) {
  return spec.mean.size() == 0 || spec.mean.cwiseAbs().maxCoeff() == 0.0;
}

std::optional<double> closed_factor_1d(const FactorFn& f, double mean,
                                       double var) {
  const double s = std::sqrt(std::max(var, 0.0));
  switch (f.tag) {
    case VtTag::Relu:
      if (s == 0.0) return std::max(mean, 0.0);
      return mean * normal_cdf(mean / s) + s * normal_pdf(mean / s);
    case VtTag::Step:
      if (s == 0.0) return mean > 0.0 ? 1.0 : 0.0;
      return normal_cdf(mean / s);
    case VtTag::Erf:
      return std::erf(mean / std::sqrt(1.0 + 2.0 * var));
    case VtTag::ErfPrime:
      if (mean == 0.0) return 2.0 / std::sqrt(M_PI) / std::sqrt(1.0 + 2.0 * var);
      return std::nullopt;
    case VtTag::ExpScale:
      return std::nullopt;  // sigma lives in the closure; handled pairwise only
    default:
      return std::nullopt;
  }
}

std::optional<double> closed_factor_pair(const FactorFn& a, const FactorFn& b,
                                         const Matrix& k) {
  if (a.tag == VtTag::Relu && b.tag == VtTag::Relu) return vt_relu(k).v;
  if (a.tag == VtTag::Step && b.tag == VtTag::Step) return vt_relu(k).vprime;
  if (a.tag == VtTag::Erf && b.tag == VtTag::Erf) return vt_erf(k).v;
  if (a.tag == VtTag::ErfPrime && b.tag == VtTag::ErfPrime)
    return vt_erf(k).vprime;
  return std::nullopt;
}

}  // namespace

Expectation expect_factor_product(std::span<const FactorFn> factors,
                                  const GaussSpec& spec,
                                  const ExpectConfig& cfg) {
  const int k = spec.dim();
  if (static_cast<int>(factors.size()) != k)
    fail(ErrorCode::ArityMismatch, "factor count != Gaussian dimension");
  spec.validate();
  Expectation out;
  if (k == 0) {
    out.value = 1.0;
    return out;
  }

  const bool want_closed =
      cfg.allow_closed_form && cfg.prefer != ExpectConfig::Prefer::Quadrature &&
      cfg.prefer != ExpectConfig::Prefer::MonteCarlo;

  if (want_closed) {
    if (k == 1) {
      if (auto v = closed_factor_1d(factors[0], spec.mean(0), spec.cov(0, 0))) {
        out.value = *v;
        return out;
      }
      if (factors[0].polynomial) {
        // identity / square have exact moments
        const double m = spec.mean(0), var = spec.cov(0, 0);
        const double f1 = factors[0].fn(1.0), f0 = factors[0].fn(0.0),
                     f2 = factors[0].fn(2.0);
        // detect identity (f(t)=t) and square (f(t)=t^2) cheaply
        if (f0 == 0.0 && f1 == 1.0 && f2 == 2.0) {
          out.value = m;
          return out;
        }
        if (f0 == 0.0 && f1 == 1.0 && f2 == 4.0) {
          out.value = var + m * m;
          return out;
        }
      }
    }
    if (k == 2 && zero_mean(spec)) {
      if (auto v = closed_factor_pair(factors[0], factors[1], spec.cov)) {
        out.value = *v;
        return out;
      }
    }
  }
  if (cfg.prefer == ExpectConfig::Prefer::ClosedForm)
    fail(ErrorCode::MethodUnavailable, "no closed form for this expectation");

  bool smooth = true, have_breaks = true;
  for (const auto& f : factors) {
    if (!f.smooth) smooth = false;
    if (!f.smooth && f.breakpoints.empty()) have_breaks = false;
  }

  const bool can_quad = k <= 3 && (smooth || have_breaks);
  const bool want_quad = cfg.prefer != ExpectConfig::Prefer::MonteCarlo;
  if (want_quad && can_quad) {
    auto f = [&](const Vector& z) {
      double p = 1.0;
      for (int i = 0; i < k; ++i) p *= factors[i].fn(z(i));
      return p;
    };
    out.method = Expectation::Method::GaussHermite;
    out.quad_order = cfg.quad_order;
    out.error_estimate = 0.0;
    if (smooth) {
      out.value = gh_tensor(f, spec, cfg.quad_order);
    } else {
      std::vector<std::vector<double>> breaks(k);
      for (int i = 0; i < k; ++i) breaks[i] = factors[i].breakpoints;
      out.value = panel_integrate(f, spec, breaks, cfg.quad_order);
    }
    return out;
  }
  if (cfg.prefer == ExpectConfig::Prefer::Quadrature)
    fail(ErrorCode::MethodUnavailable,
         k > 3 ? "quadrature limited to 3 dimensions"
               : "quadrature requires smoothness or breakpoints");

  auto f = [&](const Vector& z) {
    double p = 1.0;
    for (int i = 0; i < k; ++i) p *= factors[i].fn(z(i));
    return p;
  };
  return mc_expectation(f, spec, cfg.mc_samples, cfg.mc_seed);
}

Expectation gauss_expectation(const FunctionSpec& psi, const GaussSpec& spec,
                              const ExpectConfig& cfg) {
  if (psi.arity != spec.dim())
    fail(ErrorCode::ArityMismatch, "psi arity != Gaussian dimension");
  spec.validate();
  Expectation out;

  const bool want_closed =
      cfg.allow_closed_form && cfg.prefer != ExpectConfig::Prefer::Quadrature &&
      cfg.prefer != ExpectConfig::Prefer::MonteCarlo;
  if (want_closed && psi.pair_tag != VtTag::None && psi.arity == 2 &&
      spec.mean.cwiseAbs().maxCoeff() == 0.0) {
    switch (psi.pair_tag) {
      case VtTag::Relu: out.value = vt_relu(spec.cov).v; return out;
      case VtTag::ReluPrime:
      case VtTag::Step: out.value = vt_relu(spec.cov).vprime; return out;
      case VtTag::Erf: out.value = vt_erf(spec.cov).v; return out;
      case VtTag::ErfPrime: out.value = vt_erf(spec.cov).vprime; return out;
      default: break;
    }
  }
  if (cfg.prefer == ExpectConfig::Prefer::ClosedForm)
    fail(ErrorCode::MethodUnavailable, "no closed form for this expectation");

  auto call = [&](const Vector& z) {
    return psi.fn(std::span<const double>(z.data(), z.size()));
  };
  const bool has_breaks = !psi.axis_breakpoints.empty();
  const bool can_quad = psi.arity <= 3 && (psi.smooth || has_breaks);
  if (cfg.prefer != ExpectConfig::Prefer::MonteCarlo && can_quad) {
    out.method = Expectation::Method::GaussHermite;
    out.quad_order = cfg.quad_order;
    if (psi.smooth && !has_breaks) {
      out.value = gh_tensor(call, spec, cfg.quad_order);
    } else {
      out.value = panel_integrate(call, spec, psi.axis_breakpoints, cfg.quad_order);
    }
    return out;
  }
  if (cfg.prefer == ExpectConfig::Prefer::Quadrature)
    fail(ErrorCode::MethodUnavailable,
         psi.arity > 3 ? "quadrature limited to 3 dimensions"
                       : "quadrature requires smooth psi or breakpoints");
  return mc_expectation(call, spec, cfg.mc_samples, cfg.mc_seed);
}

}  // namespace ntk
