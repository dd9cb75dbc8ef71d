// Deterministic work partitioning. Work is split into fixed-size blocks that
// depend only on the item count; threads pick blocks, and any reduction is
// merged sequentially in block order afterwards. Results are therefore
// bit-identical for every thread count, including 1.
#pragma once

#include <cstddef>
#include <functional>

namespace ergolab {

// Global worker cap (CLI --threads). 0 = hardware concurrency.
void set_max_threads(int n);
int max_threads();

inline constexpr std::size_t kBlockSize = 4096;

// Calls fn(block_index, begin, end) for every block of [0, n).
void parallel_blocks(std::size_t n, const std::function<void(std::size_t, std::size_t, std::size_t)>& fn);

std::size_t block_count(std::size_t n);

}  // namespace ergolab
