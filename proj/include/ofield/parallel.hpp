#pragma once

#include <cstdint>
#include <functional>

namespace ofield {

/// Worker cap for parallel_for; 0 selects hardware concurrency.
void set_thread_count(int n);
int thread_count();

/// Runs fn(i) for i in [0, n) over contiguous chunks. Results must be written
/// to per-index storage, so output never depends on the worker count.
void parallel_for(int64_t n, const std::function<void(int64_t)>& fn);

}  // namespace ofield
