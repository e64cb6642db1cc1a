#pragma once

#include <cstdlib>
#include <functional>
#include <thread>
#include <vector>

namespace n4 {

/// Worker count: hardware concurrency capped by the N4_THREADS environment
/// variable. Parallel sections below assign independent output slots per
/// index and reduce in index order, so results do not depend on this value.
inline unsigned workerCount() {
    unsigned n = std::thread::hardware_concurrency();
    if (n == 0) n = 1;
    if (const char* cap = std::getenv("N4_THREADS")) {
        long v = std::strtol(cap, nullptr, 10);
        if (v >= 1 && static_cast<unsigned>(v) < n) n = static_cast<unsigned>(v);
    }
    return n;
}

/// Run fn(i) for i in [0, n). Exceptions from workers are rethrown on the
/// calling thread (first by index).
inline void parallelFor(std::size_t n, const std::function<void(std::size_t)>& fn) {
    const unsigned workers = std::min<std::size_t>(workerCount(), n);
    if (workers <= 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errors(workers);
    for (unsigned w = 0; w < workers; ++w) {
        pool.emplace_back([&, w] {
            try {
                for (std::size_t i = w; i < n; i += workers) fn(i);
            } catch (...) {
                errors[w] = std::current_exception();
            }
        });
    }
    for (auto& t : pool) t.join();
    for (auto& e : errors) {
        if (e) std::rethrow_exception(e);
    }
}

}  // namespace n4
