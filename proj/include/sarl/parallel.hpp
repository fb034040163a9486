#pragma once

#include <cstddef>
#include <functional>

namespace sarl {

// Thread count to use: `requested` if non-zero, else the SARL_THREADS
// environment variable, else the hardware concurrency.
std::size_t resolve_threads(std::size_t requested);

// Runs fn(0) .. fn(n-1) on up to `threads` workers. Each index runs exactly
// once; callers write results into per-index slots so the outcome does not
// depend on scheduling. The first exception thrown is rethrown.
void parallel_for(std::size_t n, std::size_t threads, const std::function<void(std::size_t)>& fn);

}  // namespace sarl
