#pragma once

#include <cstdint>
#include <functional>

namespace ntk {

// Worker cap: min(hardware threads, NTK_THREADS if set).
int worker_count();

// Runs fn(0..n-1) on up to `max_workers` threads (0 = worker_count()).
// Callers must make tasks write to disjoint, preallocated slots so results
// do not depend on scheduling.
void parallel_for(int64_t n, const std::function<void(int64_t)>& fn,
                  int max_workers = 0);

}  // namespace ntk
