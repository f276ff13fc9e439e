#pragma once

#include <functional>
#include <vector>

namespace vista {

// Worker count for data generation and evaluation fan-out. Respects the
// VISTA_THREADS environment variable; defaults to hardware concurrency.
int worker_count();

// Runs fn(i) for i in [0, n) across workers. Each index is independent;
// callers own any determinism requirements (per-task rng streams).
void parallel_for(int n, const std::function<void(int)>& fn);

} // namespace vista
