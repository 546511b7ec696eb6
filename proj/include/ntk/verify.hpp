#pragma once

#include <string>
#include <vector>

#include "ntk/frontends.hpp"

namespace ntk {

// One limit value checked against the empirical average over seeds.
struct MomentCheck {
  std::string label;
  double limit = 0.0;
  double empirical = 0.0;  // mean over seeds
  double se = 0.0;         // sample std / sqrt(seeds)
  double deviation() const;
  bool within(double k_se) const;
};

// Checks every covariance entry of the computed limit state and every
// frontend-tracked kernel entry against finite-width averages at width n.
std::vector<MomentCheck> verify_moments(const EmittedProgram& ep,
                                        const LimitState& s, int64_t n,
                                        int seeds, uint64_t base_seed);

struct SweepRow {
  std::string arch;
  int64_t width = 0;
  uint64_t seed = 0;
  double frob_rel_dev = 0.0;
  int64_t wall_ms = 0;
};

// Frobenius relative deviation of the empirical NTK from theta_limit over
// a width/seed grid. Rows come back sorted by (width, seed); results are
// independent of the worker count. Cells are scheduled under a resident-set
// budget so wide instances do not exhaust memory.
std::vector<SweepRow> run_sweep(const EmittedProgram& ep,
                                const Matrix& theta_limit,
                                const std::string& arch,
                                const std::vector<int64_t>& widths, int seeds,
                                uint64_t base_seed,
                                int64_t mem_budget_bytes = 6ll << 30);

// Per-width medians of frob_rel_dev, ordered by width ascending.
std::vector<double> sweep_medians(const std::vector<SweepRow>& rows,
                                  const std::vector<int64_t>& widths);

// Least-squares slope of log(median) against log(width).
double loglog_slope(const std::vector<int64_t>& widths,
                    const std::vector<double>& medians);

int count_nonincreasing_steps(const std::vector<double>& medians);

std::string sweep_csv(const std::vector<SweepRow>& rows,
                      bool with_timings = false);

}  // namespace ntk
