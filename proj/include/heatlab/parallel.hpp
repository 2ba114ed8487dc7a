#pragma once

#include <cstddef>
#include <functional>

namespace heatlab {

// Thread-count policy. 0 means "use OpenMP default". The HEATLAB_THREADS
// environment variable overrides any programmatic setting at first query.
void set_max_threads(int n);
int max_threads();

// Runs fn(i) for i in [0, n). The parallel lane distributes iterations over
// OpenMP threads; the serial lane is the reference implementation kept for
// testing. Work must be index-addressed (write only to slot i) so both lanes
// produce identical results.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);
void serial_for(std::size_t n, const std::function<void(std::size_t)>& fn);

// True when the parallel lane actually runs OpenMP (compiled in and more
// than one thread requested).
bool parallel_enabled();

}  // namespace heatlab
