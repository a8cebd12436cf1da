#pragma once

#include <cstdlib>
#include <functional>
#include <thread>
#include <vector>

namespace fan {

// Global worker count for parallel_for. Every parallel loop partitions work
// into disjoint output ranges whose per-element computation is identical to
// the serial order, so results are bitwise equal for any thread count.
// FAN_REFERENCE_MODE=1 forces 1.
inline int& thread_count() {
    static int count = 1;
    return count;
}

inline void set_thread_count(int n) {
    if (std::getenv("FAN_REFERENCE_MODE") != nullptr) n = 1;
    thread_count() = n < 1 ? 1 : n;
}

template <typename Fn>
void parallel_for(int64_t begin, int64_t end, Fn&& fn) {
    const int64_t total = end - begin;
    const int workers = thread_count();
    if (workers <= 1 || total <= 1) {
        for (int64_t i = begin; i < end; ++i) fn(i);
        return;
    }
    const int n = static_cast<int>(workers < total ? workers : total);
    std::vector<std::thread> pool;
    pool.reserve(n);
    for (int t = 0; t < n; ++t) {
        pool.emplace_back([=, &fn] {
            for (int64_t i = begin + t; i < end; i += n) fn(i);
        });
    }
    for (auto& th : pool) th.join();
}

}  // namespace fan
