#ifndef MSDNN_THREADS_HPP
#define MSDNN_THREADS_HPP

#include <cstdint>
#include <functional>

namespace msdnn {

/// Parallelism cap: MSDNN_THREADS when set (minimum 1), else hardware
/// concurrency. Read once.
int max_threads();

/// Runs fn(0..n-1), fanning out across at most max_threads() workers. Callers
/// must write to disjoint per-index slots; results cannot depend on schedule.
void parallel_for(std::int64_t n, const std::function<void(std::int64_t)>& fn);

} // namespace msdnn

#endif
