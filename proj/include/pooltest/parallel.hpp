#pragma once

#include <cstddef>
#include <functional>

namespace pooltest {

/// Worker count: POOLTEST_THREADS if set, else hardware concurrency.
int effective_threads();

/// Run fn(0..n-1), possibly on several threads. Each index must write only
/// to its own output slot; results are then independent of scheduling.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

}  // namespace pooltest
