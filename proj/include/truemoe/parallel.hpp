#pragma once

#include <algorithm>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <span>
#include <string>
#include <thread>
#include <vector>

namespace truemoe {

// Worker cap from TRUEMOE_THREADS, else the hardware parallelism.
inline std::size_t worker_count() {
    if (const char* env = std::getenv("TRUEMOE_THREADS")) {
        const long v = std::strtol(env, nullptr, 10);
        if (v >= 1) return std::size_t(v);
    }
    return std::max(1u, std::thread::hardware_concurrency());
}

// Runs f(i) for i in [0, n). Each index writes only its own output slot, so
// results do not depend on the number of workers.
template <class F>
void parallel_for(std::size_t n, F&& f) {
    const std::size_t workers = std::min(worker_count(), n);
    if (workers <= 1) {
        for (std::size_t i = 0; i < n; ++i) f(i);
        return;
    }
    std::exception_ptr error;
    std::mutex mu;
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) {
        pool.emplace_back([&, w] {
            try {
                for (std::size_t i = w; i < n; i += workers) f(i);
            } catch (...) {
                std::lock_guard<std::mutex> lock(mu);
                if (!error) error = std::current_exception();
            }
        });
    }
    for (auto& t : pool) t.join();
    if (error) std::rethrow_exception(error);
}

// Fixed-shape pairwise tree sum, independent of how the terms were produced.
inline double pairwise_sum(std::span<const double> v) {
    if (v.empty()) return 0.0;
    if (v.size() == 1) return v[0];
    const std::size_t h = v.size() / 2;
    return pairwise_sum(v.first(h)) + pairwise_sum(v.subspan(h));
}

}  // namespace truemoe
