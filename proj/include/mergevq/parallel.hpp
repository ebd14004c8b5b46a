#pragma once

#include <cstddef>
#include <functional>

namespace mvq {

/// Worker count: MVQ_THREADS if set to a positive integer, else the hardware
/// concurrency, never more than `cap` (0 = no cap).
std::size_t thread_budget(std::size_t cap = 0);

/// Runs fn(i) for i in [0, n) on up to `threads` workers. Each index runs
/// exactly once; the first exception thrown is rethrown after all workers stop.
void parallel_for(std::size_t n, std::size_t threads, const std::function<void(std::size_t)>& fn);

}  // namespace mvq
