// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <functional>

namespace superdir {

// Worker count: SUPERDIR_THREADS if set (>= 1), otherwise hardware concurrency.
std::size_t thread_budget();

// Runs body(i) for i in [0, n). Each index is executed exactly once; callers
// write results into per-index slots so output order never depends on
// scheduling.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& body);

}  // namespace superdir
