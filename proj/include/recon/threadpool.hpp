#pragma once

#include <algorithm>
#include <cstdint>
#include <exception>
#include <functional>
#include <thread>
#include <vector>

namespace recon {

// Global worker count, set once by the CLI (--workers). Defaults to the
// hardware concurrency.
int worker_count();
void set_worker_count(int n);

// Static contiguous partition of [0, n) over up to `workers` threads. Each
// range writes disjoint output, so results are bit-identical for any worker
// count.
inline void parallel_for(int64_t n, const std::function<void(int64_t, int64_t)>& fn, int workers = 0) {
    if (workers <= 0) workers = worker_count();
    workers = static_cast<int>(std::min<int64_t>(workers, std::max<int64_t>(n, 1)));
    if (workers <= 1 || n <= 1) {
        fn(0, n);
        return;
    }
    std::vector<std::thread> threads;
    std::vector<std::exception_ptr> errors(static_cast<size_t>(workers));
    int64_t chunk = (n + workers - 1) / workers;
    for (int w = 0; w < workers; ++w) {
        int64_t begin = w * chunk;
        int64_t end = std::min<int64_t>(begin + chunk, n);
        if (begin >= end) break;
        threads.emplace_back([&, w, begin, end] {
            try {
                fn(begin, end);
            } catch (...) {
                errors[static_cast<size_t>(w)] = std::current_exception();
            }
        });
    }
    for (auto& t : threads) t.join();
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
}

}  // namespace recon
