#pragma once

#include <cstddef>
#include <functional>

namespace inrmar {

// Process-wide worker count used by all data-parallel loops. Defaults to 1.
void set_worker_count(std::size_t n);
std::size_t worker_count();

// Runs fn(i) for every i in [0, n). Work items are claimed dynamically, so
// callers must write results into per-item slots and merge them in index
// order to stay independent of the worker count.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

}  // namespace inrmar
