#include "ntk/verify.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>

#include "ntk/parallel.hpp"
#include "ntk/random.hpp"

namespace ntk {

double MomentCheck::deviation() const { return std::fabs(empirical - limit); }

bool MomentCheck::within(double k_se) const {
  return deviation() <= k_se * se + 1e-12;
}

std::vector<MomentCheck> verify_moments(const EmittedProgram& ep,
                                        const LimitState& s, int64_t n,
                                        int seeds, uint64_t base_seed) {
  const Program& p = ep.program;
  // collect the checks: limit-state covariance entries, then tracked kernels
  struct Item {
    std::string label;
    VarId a, b;
    double limit;
  };
  std::vector<Item> items;
  auto var_label = [&](uint32_t idx) {
    const VarId v{idx, p.kind(idx)};
    const std::string& l = p.label(v);
    return l.empty() ? "#" + std::to_string(idx) : l;
  };
  for (const auto& blk : s.blocks)
    for (size_t i = 0; i < blk.members.size(); ++i)
      for (size_t j = 0; j <= i; ++j) {
        const VarId a{blk.members[i], p.kind(blk.members[i])};
        const VarId b{blk.members[j], p.kind(blk.members[j])};
        const double mu_term = s.mean_of(a) * s.mean_of(b);
        items.push_back({"Sigma(" + var_label(a.index) + "," +
                             var_label(b.index) + ")",
                         a, b, blk.cov(i, j) + mu_term});
      }
  for (const auto& t : ep.tracked) items.push_back({t.label, t.a, t.b, t.limit});

  // empirical inner products per seed, gated by resident size
  const int64_t bytes = instance_bytes(p, n);
  const int workers = std::min<int64_t>(
      worker_count(), std::max<int64_t>(1, (6ll << 30) / std::max<int64_t>(bytes, 1)));
  std::vector<std::vector<double>> values(seeds,
                                          std::vector<double>(items.size()));
  parallel_for(
      seeds,
      [&](int64_t sd) {
        Instance inst = instantiate(p, n, rng::key(base_seed, 0x5eed, sd));
        execute(inst);
        for (size_t i = 0; i < items.size(); ++i)
          values[sd][i] =
              empirical_inner(inst.vec(items[i].a), inst.vec(items[i].b));
      },
      static_cast<int>(workers));

  std::vector<MomentCheck> out(items.size());
  for (size_t i = 0; i < items.size(); ++i) {
    double mean = 0.0;
    for (int sd = 0; sd < seeds; ++sd) mean += values[sd][i];
    mean /= seeds;
    double var = 0.0;
    for (int sd = 0; sd < seeds; ++sd) {
      const double d = values[sd][i] - mean;
      var += d * d;
    }
    var = seeds > 1 ? var / (seeds - 1) : 0.0;
    out[i] = {items[i].label, items[i].limit, mean,
              std::sqrt(var / seeds)};
  }
  return out;
}

std::vector<SweepRow> run_sweep(const EmittedProgram& ep,
                                const Matrix& theta_limit,
                                const std::string& arch,
                                const std::vector<int64_t>& widths, int seeds,
                                uint64_t base_seed, int64_t mem_budget_bytes) {
  const double norm = theta_limit.norm();
  std::vector<SweepRow> rows;
  std::vector<int64_t> order(widths.begin(), widths.end());
  std::sort(order.rbegin(), order.rend());
  for (int64_t width : order) {
    const int64_t bytes = instance_bytes(ep.program, width);
    int workers = static_cast<int>(
        std::max<int64_t>(1, mem_budget_bytes / std::max<int64_t>(bytes, 1)));
    workers = std::min(workers, worker_count());
    std::vector<SweepRow> slot(seeds);
    parallel_for(
        seeds,
        [&](int64_t sd) {
          const auto t0 = std::chrono::steady_clock::now();
          const uint64_t cell_seed = rng::key(base_seed, width, sd);
          const Matrix emp = empirical_ntk(ep.program, ep.grouping, width,
                                           cell_seed);
          const auto t1 = std::chrono::steady_clock::now();
          slot[sd] = {arch, width, cell_seed,
                      (emp - theta_limit).norm() / norm,
                      std::chrono::duration_cast<std::chrono::milliseconds>(
                          t1 - t0)
                          .count()};
        },
        workers);
    rows.insert(rows.end(), slot.begin(), slot.end());
  }
  std::sort(rows.begin(), rows.end(), [](const SweepRow& a, const SweepRow& b) {
    return a.width != b.width ? a.width < b.width : a.seed < b.seed;
  });
  return rows;
}

std::vector<double> sweep_medians(const std::vector<SweepRow>& rows,
                                  const std::vector<int64_t>& widths) {
  std::vector<double> medians;
  for (int64_t w : widths) {
    std::vector<double> devs;
    for (const auto& r : rows)
      if (r.width == w) devs.push_back(r.frob_rel_dev);
    std::sort(devs.begin(), devs.end());
    const size_t n = devs.size();
    medians.push_back(n == 0 ? 0.0
                      : n % 2 ? devs[n / 2]
                              : 0.5 * (devs[n / 2 - 1] + devs[n / 2]));
  }
  return medians;
}

double loglog_slope(const std::vector<int64_t>& widths,
                    const std::vector<double>& medians) {
  const size_t n = widths.size();
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (size_t i = 0; i < n; ++i) {
    const double x = std::log(static_cast<double>(widths[i]));
    const double y = std::log(medians[i]);
    sx += x;
    sy += y;
    sxx += x * x;
    sxy += x * y;
  }
  return (n * sxy - sx * sy) / (n * sxx - sx * sx);
}

int count_nonincreasing_steps(const std::vector<double>& medians) {
  int count = 0;
  for (size_t i = 1; i < medians.size(); ++i)
    if (medians[i] <= medians[i - 1]) ++count;
  return count;
}

std::string sweep_csv(const std::vector<SweepRow>& rows, bool with_timings) {
  std::string out = with_timings ? "arch,width,seed,frob_rel_dev,wall_ms\n"
                                 : "arch,width,seed,frob_rel_dev\n";
  char buf[64];
  for (const auto& r : rows) {
    out += r.arch + "," + std::to_string(r.width) + "," +
           std::to_string(r.seed) + ",";
    std::snprintf(buf, sizeof(buf), "%.17g", r.frob_rel_dev);
    out += buf;
    if (with_timings) out += "," + std::to_string(r.wall_ms);
    out += "\n";
  }
  return out;
}

}  // namespace ntk
