#pragma once

#include <cstddef>
#include <functional>

namespace hmcda {

/// Worker count used when a caller passes 0 (defaults to 1).
void set_default_threads(unsigned n);
unsigned default_threads();

/// Calls fn(i) for i in [0, n) on up to `threads` workers. Each index must
/// write only to its own output slot. If any call throws, the exception from
/// the lowest failing index is rethrown after all workers stop.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn, unsigned threads = 0);

}  // namespace hmcda
