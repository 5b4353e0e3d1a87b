#pragma once

#include <cstddef>
#include <functional>

namespace jnflow {

/// Worker cap from JNF_THREADS: unset or invalid means hardware
/// concurrency, 0 means serial execution on the calling thread.
std::size_t worker_count();

/// Runs task(i) for i in [0, n). Tasks must write to disjoint outputs; the
/// result never depends on the worker count. The first exception thrown by
/// a task is rethrown after all workers finish.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& task);

}  // namespace jnflow
