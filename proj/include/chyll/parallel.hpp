#pragma once

#include <cstddef>
#include <functional>

namespace chyll {

// Worker count from CHYLL_THREADS (default 1, minimum 1).
int worker_count();

// Runs fn(i) for i in [0, n) over worker_count() threads in contiguous
// blocks. Results must be written to per-index slots; the first exception
// thrown by any worker is rethrown.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

}  // namespace chyll
