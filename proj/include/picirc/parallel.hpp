#pragma once

#include <cstddef>
#include <functional>

namespace picirc {

/// Worker cap for library-internal parallel loops. Defaults to PICIRC_THREADS, then
/// the hardware concurrency.
std::size_t num_threads();
void set_num_threads(std::size_t n);

/// Runs body(begin, end) over contiguous chunks of [0, n). Chunks are fixed by n and the
/// thread count, so any per-chunk results can be reduced in a deterministic order.
void parallel_for(std::size_t n, const std::function<void(std::size_t, std::size_t)>& body);

}  // namespace picirc
