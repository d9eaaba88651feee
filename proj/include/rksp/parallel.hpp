#pragma once

#include <cstddef>
#include <functional>

namespace rksp {

/// Worker count from RKSP_THREADS, defaulting to hardware concurrency.
std::size_t thread_count();

/// Runs body(i) for i in [0, n). Each index is handled by exactly one worker;
/// callers write into pre-sized slots so results never depend on scheduling.
/// The first exception thrown by any body is rethrown after all workers join.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& body);

}  // namespace rksp
