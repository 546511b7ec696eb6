#include "ntk/finite.hpp"

#include <cmath>

#include "ntk/errors.hpp"
#include "ntk/parallel.hpp"
#include "ntk/random.hpp"

namespace ntk {

namespace {
constexpr uint64_t kStreamMatrix = 1ull << 56;
constexpr uint64_t kStreamInput = 2ull << 56;

double scalar_value(const InputScalar& s, int64_t n) {
  switch (s.rule) {
    case ScalarRule::Constant: return s.limit;
    case ScalarRule::GivenSequence:
      return s.limit + s.amplitude / static_cast<double>(n);
  }
  return s.limit;
}
}  // namespace

const Vector& Instance::vec(VarId v) const {
  auto it = vectors.find(v.index);
  if (it == vectors.end())
    fail(ErrorCode::UseBeforeDef, "vector #" + std::to_string(v.index) +
                                      " not materialized");
  return it->second;
}

double Instance::scalar(VarId v) const {
  auto it = scalars.find(v.index);
  if (it == scalars.end())
    fail(ErrorCode::UseBeforeDef, "scalar #" + std::to_string(v.index) +
                                      " not materialized");
  return it->second;
}

Instance instantiate(const Program& p, int64_t n, uint64_t seed) {
  if (n < 1) fail(ErrorCode::BadConfig, "width must be >= 1");
  Instance inst;
  inst.program = &p;
  inst.n = n;
  inst.seed = seed;

  for (const auto& m : p.matrices) {
    Matrix w(n, n);
    const double scale = std::sqrt(m.sigma2 / static_cast<double>(n));
    // column-parallel: contiguous writes into the column-major storage
    const uint64_t base = rng::stream_key(seed, kStreamMatrix | m.id.index);
    parallel_for(n, [&](int64_t col) {
      double* out = w.data() + col * n;
      for (int64_t row = 0; row < n; ++row)
        out[row] = scale * rng::normal_at(
                               rng::combine(base, static_cast<uint64_t>(row)),
                               static_cast<uint64_t>(col));
    });
    inst.matrices.emplace(m.id.index, std::move(w));
  }

  const auto k = static_cast<int>(p.input_vectors.size());
  if (k > 0) {
    const Matrix l = pivoted_cholesky(p.sigma_in);
    const int r = static_cast<int>(l.cols());
    std::vector<Vector> values(k, Vector(n));
    std::vector<uint64_t> bases(r);
    for (int j = 0; j < r; ++j)
      bases[j] = rng::stream_key(seed, kStreamInput | static_cast<uint64_t>(j));
    parallel_for(n, [&](int64_t a) {
      Vector zr(r);
      for (int j = 0; j < r; ++j)
        zr(j) = rng::normal_at(bases[j], static_cast<uint64_t>(a));
      for (int i = 0; i < k; ++i) {
        double v = p.mu_in(i);
        for (int j = 0; j < r; ++j) v += l(i, j) * zr(j);
        values[i](a) = v;
      }
    });
    for (int i = 0; i < k; ++i)
      inst.vectors.emplace(p.input_vectors[i].index, std::move(values[i]));
  }

  for (const auto& s : p.scalars)
    inst.scalars.emplace(s.id.index, scalar_value(s, n));
  return inst;
}

void execute(Instance& inst, const std::map<uint32_t, Vector>& overrides) {
  const Program& p = *inst.program;
  const int64_t n = inst.n;
  Registry& reg = Registry::instance();

  for (const auto& [idx, val] : overrides) inst.vectors[idx] = val;

  std::vector<bool> done(p.body.size(), false);
  for (size_t li = 0; li < p.body.size(); ++li) {
    if (done[li]) continue;
    const Line& l = p.body[li];
    if (l.out.is_vector() || l.op == Line::Op::Moment) {
      if (overrides.count(l.out.index)) continue;
    }
    switch (l.op) {
      case Line::Op::MatMul: {
        // batch all pending products with the same oriented matrix whose
        // arguments are already available: one pass over the big matrix
        std::vector<size_t> group{li};
        for (size_t lj = li + 1; lj < p.body.size(); ++lj) {
          const Line& cand = p.body[lj];
          if (done[lj] || cand.op != Line::Op::MatMul) continue;
          if (cand.matrix != l.matrix || cand.transposed != l.transposed)
            continue;
          if (overrides.count(cand.out.index)) continue;
          // the argument must be defined before this batch point
          const int def = p.defining_line(cand.arg);
          const bool available = overrides.count(cand.arg.index) || def < 0 ||
                                 static_cast<size_t>(def) < li;
          if (!available) continue;
          group.push_back(lj);
        }
        const Matrix& w = inst.matrices.at(l.matrix.index);
        const auto cols = static_cast<Eigen::Index>(group.size());
        Matrix xs(n, cols), ys(n, cols);
        for (Eigen::Index c = 0; c < cols; ++c)
          xs.col(c) = inst.vec(p.body[group[c]].arg);
        if (l.transposed)
          ys.noalias() = w.transpose() * xs;
        else
          ys.noalias() = w * xs;
        if (!ys.allFinite())
          fail(ErrorCode::NumericOverflow,
               "non-finite value at line " + std::to_string(li));
        for (Eigen::Index c = 0; c < cols; ++c) {
          inst.vectors[p.body[group[c]].out.index] = ys.col(c);
          done[group[c]] = true;
        }
        break;
      }
      case Line::Op::Nonlin:
      case Line::Op::Moment: {
        const NonlinEntry& e = reg.get(l.fn);
        const int ka = static_cast<int>(l.args.size());
        std::vector<const Vector*> args(ka);
        for (int i = 0; i < ka; ++i) args[i] = &inst.vec(l.args[i]);
        std::vector<double> theta(l.scalar_args.size());
        for (size_t i = 0; i < l.scalar_args.size(); ++i)
          theta[i] = inst.scalar(l.scalar_args[i]);

        if (l.op == Line::Op::Nonlin) {
          Vector y(n);
          std::vector<double> slice(ka);
          for (int64_t a = 0; a < n; ++a) {
            for (int i = 0; i < ka; ++i) slice[i] = (*args[i])(a);
            y(a) = e.eval(slice, theta);
          }
          if (!y.allFinite())
            fail(ErrorCode::NumericOverflow,
                 "non-finite value at line " + std::to_string(li));
          inst.vectors[l.out.index] = std::move(y);
        } else {
          std::vector<double> vals(n);
          std::vector<double> slice(ka);
          for (int64_t a = 0; a < n; ++a) {
            for (int i = 0; i < ka; ++i) slice[i] = (*args[i])(a);
            vals[a] = e.eval(slice, theta);
          }
          const double v = pairwise_mean(vals);
          if (!std::isfinite(v))
            fail(ErrorCode::NumericOverflow,
                 "non-finite value at line " + std::to_string(li));
          inst.scalars[l.out.index] = v;
        }
        break;
      }
    }
  }
}

int64_t instance_bytes(const Program& p, int64_t n) {
  int64_t vectors = static_cast<int64_t>(p.input_vectors.size());
  for (const auto& l : p.body)
    if (l.out.is_vector() || l.op == Line::Op::MatMul) ++vectors;
  return static_cast<int64_t>(p.matrices.size()) * n * n * 8 +
         vectors * n * 8;
}

double empirical_average(
    const std::function<double(std::span<const double>)>& psi,
    std::span<const Vector* const> vectors) {
  if (vectors.empty()) fail(ErrorCode::LengthMismatch, "no vectors given");
  const int64_t n = vectors[0]->size();
  for (const auto* v : vectors)
    if (v->size() != n)
      fail(ErrorCode::LengthMismatch, "vector lengths differ");
  std::vector<double> vals(n);
  std::vector<double> slice(vectors.size());
  for (int64_t a = 0; a < n; ++a) {
    for (size_t i = 0; i < vectors.size(); ++i) slice[i] = (*vectors[i])(a);
    vals[a] = psi(slice);
  }
  return pairwise_mean(vals);
}

double empirical_average(const NonlinEntry& fn,
                         std::span<const Vector* const> vectors,
                         std::span<const double> theta) {
  std::vector<double> th(theta.begin(), theta.end());
  return empirical_average(
      [&fn, &th](std::span<const double> x) { return fn.eval(x, th); },
      vectors);
}

double empirical_inner(const Vector& x, const Vector& y) {
  if (x.size() != y.size())
    fail(ErrorCode::LengthMismatch, "vector lengths differ");
  std::vector<double> vals(x.size());
  for (Eigen::Index a = 0; a < x.size(); ++a) vals[a] = x(a) * y(a);
  return pairwise_mean(vals);
}

double empirical_mean(const Vector& x) {
  std::vector<double> vals(x.data(), x.data() + x.size());
  return pairwise_mean(vals);
}

// ---------------------------------------------------------------------------

namespace {

// Distance from the executed values to the nearest kink of any non-smooth
// line, at coordinate a. Infinite when every line is smooth there.
double kink_clearance(const Instance& inst, int64_t a) {
  const Program& p = *inst.program;
  Registry& reg = Registry::instance();
  double clearance = std::numeric_limits<double>::infinity();
  for (const auto& l : p.body) {
    if (l.op == Line::Op::MatMul) continue;
    const NonlinEntry& e = reg.get(l.fn);
    if (e.smooth) continue;
    if (e.product) {
      std::vector<double> theta(l.scalar_args.size());
      for (size_t i = 0; i < l.scalar_args.size(); ++i)
        theta[i] = inst.scalar(l.scalar_args[i]);
      for (const auto& g : e.product->groups) {
        const FactorFn f = g.factor(theta);
        if (f.smooth || f.breakpoints.empty()) continue;
        double s = 0.0;
        for (int i : g.args) s += inst.vec(l.args[i])(a);
        for (double b : f.breakpoints)
          clearance = std::min(clearance, std::fabs(s - b));
      }
    } else if (l.fn.rfind("bnrelu", 0) == 0) {
      // kinks where a centered batch entry crosses zero
      const int b = static_cast<int>(l.args.size());
      const int half = l.fn.rfind("bnrelu_bwd", 0) == 0 ? b / 2 : 0;
      double nu = 0.0;
      for (int i = half; i < b; ++i) nu += inst.vec(l.args[i])(a);
      nu /= (b - half);
      for (int i = half; i < b; ++i)
        clearance =
            std::min(clearance, std::fabs(inst.vec(l.args[i])(a) - nu));
    } else {
      // unknown kink structure: treat the coordinate as unusable
      return 0.0;
    }
  }
  return clearance;
}

double output_value(const Instance& inst, const GradCheckSpec& spec) {
  double f = 0.0;
  const double root_n = std::sqrt(static_cast<double>(inst.n));
  for (const auto& term : spec.readout)
    f += term.coeff * inst.vec(term.weight).dot(inst.vec(term.target)) / root_n;
  return f;
}

}  // namespace

GradCheckResult grad_check(const Program& p, const GradCheckSpec& spec,
                           int64_t n, uint64_t seed, double delta, int coords,
                           double kink_margin) {
  Instance base = instantiate(p, n, seed);
  execute(base);
  const double root_n = std::sqrt(static_cast<double>(n));

  std::vector<int64_t> usable;
  for (int64_t a = 0; a < n && static_cast<int>(usable.size()) < coords; ++a)
    if (kink_clearance(base, a) > kink_margin) usable.push_back(a);

  GradCheckResult result;
  for (const auto& claim : spec.claims) {
    const Vector& analytic = base.vec(claim.dvec);
    const Vector& value = base.vec(claim.vec);
    for (int64_t a : usable) {
      std::map<uint32_t, Vector> over;
      Instance work = base;
      over[claim.vec.index] = value;
      over[claim.vec.index](a) = value(a) + delta;
      execute(work, over);
      const double f_plus = output_value(work, spec);
      over[claim.vec.index](a) = value(a) - delta;
      execute(work, over);
      const double f_minus = output_value(work, spec);
      const double fd = (f_plus - f_minus) / (2.0 * delta);
      const double an = analytic(a) / root_n;
      const double rel =
          std::fabs(fd - an) / std::max(std::fabs(an), 1e-8);
      result.max_rel_error = std::max(result.max_rel_error, rel);
      ++result.coords_checked;
    }
  }
  return result;
}

}  // namespace ntk
