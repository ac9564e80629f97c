#pragma once

#include <cstdint>
#include <thread>
#include <utility>
#include <vector>

namespace stpconv {

inline int hardware_threads() {
    unsigned n = std::thread::hardware_concurrency();
    return n == 0 ? 1 : static_cast<int>(n);
}

// Runs body(begin, end) over a static partition of [0, n). Every index is
// handled by exactly one worker, so as long as workers write disjoint outputs
// the result is bitwise independent of the thread count.
template <typename Body>
void parallel_for(std::int64_t n, int threads, Body&& body) {
    if (n <= 0) return;
    if (threads <= 1 || n == 1) {
        body(std::int64_t{0}, n);
        return;
    }
    const std::int64_t workers = std::min<std::int64_t>(threads, n);
    const std::int64_t chunk = (n + workers - 1) / workers;
    std::vector<std::thread> pool;
    pool.reserve(static_cast<std::size_t>(workers));
    for (std::int64_t w = 0; w < workers; ++w) {
        const std::int64_t lo = w * chunk;
        const std::int64_t hi = std::min(n, lo + chunk);
        if (lo >= hi) break;
        pool.emplace_back([&body, lo, hi] { body(lo, hi); });
    }
    for (auto& t : pool) t.join();
}

}  // namespace stpconv
