#pragma once

#include <cstdint>
#include <functional>
#include <map>

#include "ntk/program.hpp"

namespace ntk {

// One finite-width realization of a program. Inputs are sampled from a
// counter-based source keyed by (seed, variable, coordinate), so enlarging n
// extends earlier coordinates instead of reshuffling them.
struct Instance {
  const Program* program = nullptr;
  int64_t n = 0;
  uint64_t seed = 0;
  std::map<uint32_t, Matrix> matrices;
  std::map<uint32_t, Vector> vectors;
  std::map<uint32_t, double> scalars;

  const Vector& vec(VarId v) const;
  double scalar(VarId v) const;
};

Instance instantiate(const Program& p, int64_t n, uint64_t seed);

// Executes all body lines in order, populating vectors/scalars. Vars listed
// in `overrides` keep their given values and their defining lines are
// skipped. Throws NumericOverflow naming the first non-finite line.
void execute(Instance& inst,
             const std::map<uint32_t, Vector>& overrides = {});

// Rough resident size of one instantiated+executed instance.
int64_t instance_bytes(const Program& p, int64_t n);

// Exact arithmetic mean of psi over coordinate slices (tree summation).
double empirical_average(
    const std::function<double(std::span<const double>)>& psi,
    std::span<const Vector* const> vectors);

double empirical_average(const NonlinEntry& fn,
                         std::span<const Vector* const> vectors,
                         std::span<const double> theta = {});

// x . y / n
double empirical_inner(const Vector& x, const Vector& y);
// mean of coordinates
double empirical_mean(const Vector& x);

// ---------------------------------------------------------------------------
// Finite-difference validation of hand-written backward lines.

// The scalar output is f = sum_r coeff_r * weight_r^T target_r / sqrt(n).
struct ReadoutTerm {
  VarId weight;
  VarId target;
  double coeff = 1.0;
};

// dvec claims to equal sqrt(n) * df/d(vec).
struct GradClaim {
  VarId vec;
  VarId dvec;
};

struct GradCheckSpec {
  std::vector<ReadoutTerm> readout;
  std::vector<GradClaim> claims;
};

struct GradCheckResult {
  double max_rel_error = 0.0;
  int coords_checked = 0;
};

// Central differences with step delta on >= `coords` coordinates per claim;
// coordinates whose kink clearance is below `kink_margin` are skipped.
GradCheckResult grad_check(const Program& p, const GradCheckSpec& spec,
                           int64_t n, uint64_t seed, double delta = 1e-5,
                           int coords = 32, double kink_margin = 1e-3);

}  // namespace ntk
