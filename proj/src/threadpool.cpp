#include "recon/threadpool.hpp"

#include <atomic>

namespace recon {

namespace {
std::atomic<int> g_workers{0};
}

int worker_count() {
    int n = g_workers.load(std::memory_order_relaxed);
    if (n > 0) return n;
    unsigned hw = std::thread::hardware_concurrency();
    return hw == 0 ? 1 : static_cast<int>(hw);
}

void set_worker_count(int n) { g_workers.store(n > 0 ? n : 0, std::memory_order_relaxed); }

}  // namespace recon
