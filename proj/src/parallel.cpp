#include "ergolab/parallel.hpp"

#include <algorithm>
#include <atomic>
#include <thread>
#include <vector>

namespace ergolab {

namespace {
int g_max_threads = 0;
}

void set_max_threads(int n) { g_max_threads = n < 0 ? 0 : n; }

int max_threads() {
    if (g_max_threads > 0) return g_max_threads;
    const unsigned hc = std::thread::hardware_concurrency();
    return hc == 0 ? 1 : static_cast<int>(hc);
}

std::size_t block_count(std::size_t n) { return (n + kBlockSize - 1) / kBlockSize; }

void parallel_blocks(std::size_t n,
                     const std::function<void(std::size_t, std::size_t, std::size_t)>& fn) {
    const std::size_t nblocks = block_count(n);
    if (nblocks == 0) return;
    const int workers = std::min<std::size_t>(static_cast<std::size_t>(max_threads()), nblocks);
    if (workers <= 1) {
        for (std::size_t b = 0; b < nblocks; ++b)
            fn(b, b * kBlockSize, std::min(n, (b + 1) * kBlockSize));
        return;
    }
    std::atomic<std::size_t> next{0};
    auto work = [&] {
        for (;;) {
            const std::size_t b = next.fetch_add(1);
            if (b >= nblocks) return;
            fn(b, b * kBlockSize, std::min(n, (b + 1) * kBlockSize));
        }
    };
    std::vector<std::thread> pool;
    pool.reserve(workers - 1);
    for (int w = 1; w < workers; ++w) pool.emplace_back(work);
    work();
    for (auto& t : pool) t.join();
}

}  // namespace ergolab
