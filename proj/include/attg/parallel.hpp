#pragma once

#include <cstddef>
#include <functional>

namespace attg {

// Worker count: ATTG_THREADS if set and positive, otherwise hardware concurrency.
int worker_count();

// Runs fn(i) for i in [0, n) on up to worker_count() threads. Work items are
// independent; callers write results into per-index slots so output never
// depends on scheduling. The first exception thrown by any item is rethrown.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

}  // namespace attg
