#ifndef ENERGYFORGE_PARALLEL_HPP
#define ENERGYFORGE_PARALLEL_HPP

#include <atomic>
#include <cstdint>
#include <cstdlib>
#include <exception>
#include <string>
#include <thread>
#include <vector>

namespace energyforge {

// Worker count, capped by the ENERGYFORGE_THREADS environment variable.
inline int worker_count() {
    int hw = (int)std::thread::hardware_concurrency();
    if (hw <= 0) hw = 4;
    if (const char* env = std::getenv("ENERGYFORGE_THREADS")) {
        try {
            int cap = std::stoi(env);
            if (cap >= 1) hw = std::min(hw, cap);
        } catch (...) {
        }
    }
    return hw;
}

// Runs f(i) for i in [0, n) across workers. Results must be written to
// disjoint slots; the partition of indices is irrelevant to the output.
template <typename F>
void parallel_for(int64_t n, F&& f) {
    int workers = worker_count();
    if (n <= 0) return;
    if (workers <= 1 || n < 64) {
        for (int64_t i = 0; i < n; ++i) f(i);
        return;
    }
    std::atomic<int64_t> next(0);
    std::exception_ptr error;
    std::atomic<bool> failed(false);
    auto run = [&]() {
        const int64_t chunk = 64;
        while (!failed.load(std::memory_order_relaxed)) {
            int64_t start = next.fetch_add(chunk);
            if (start >= n) break;
            int64_t end = std::min(n, start + chunk);
            try {
                for (int64_t i = start; i < end; ++i) f(i);
            } catch (...) {
                if (!failed.exchange(true)) error = std::current_exception();
                break;
            }
        }
    };
    std::vector<std::thread> threads;
    for (int w = 0; w < workers; ++w) threads.emplace_back(run);
    for (auto& t : threads) t.join();
    if (failed && error) std::rethrow_exception(error);
}

}  // namespace energyforge

#endif
