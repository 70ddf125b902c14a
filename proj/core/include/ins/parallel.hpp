#pragma once

#include <cstddef>
#include <functional>

namespace ins {

/// Upper bound on worker threads used by batch-parallel helpers. Zero means
/// hardware concurrency.
void set_thread_count(std::size_t n);
std::size_t thread_count();

/// Calls fn(begin, end) over disjoint chunks of [0, n). Chunks run
/// concurrently when more than one thread is available; fn must only read
/// shared state and write to its own range.
void parallel_for(std::size_t n, std::size_t min_chunk,
                  const std::function<void(std::size_t, std::size_t)>& fn);

}  // namespace ins
