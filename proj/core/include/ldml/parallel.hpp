#pragma once

#include <cstddef>
#include <functional>

namespace ldml {

/// Number of workers to use when the caller passes 0.
std::size_t default_thread_count();

/// Runs body(i) for i in [0, count) on up to `threads` workers (0 = default).
/// Each index runs exactly once; callers write results into per-index slots so
/// output never depends on scheduling. If bodies throw, the exception of the
/// lowest failing index is rethrown on the calling thread.
void parallel_for(std::size_t count, std::size_t threads,
                  const std::function<void(std::size_t)>& body);

}  // namespace ldml
