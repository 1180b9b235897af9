#ifndef DRDID_PARALLEL_HPP
#define DRDID_PARALLEL_HPP

#include <cstdlib>
#include <exception>
#include <functional>
#include <mutex>
#include <thread>
#include <vector>

namespace drdid {

/// Default worker count: DRDID_THREADS env var, else hardware concurrency.
inline int default_thread_count() {
    if (const char* env = std::getenv("DRDID_THREADS")) {
        const int n = std::atoi(env);
        if (n >= 1) return n;
    }
    const unsigned hw = std::thread::hardware_concurrency();
    return hw ? static_cast<int>(hw) : 1;
}

/// Runs fn(i) for i in [0, n). Tasks are partitioned statically by index, and
/// callers store results by index, so output is identical for any thread count.
inline void parallel_for(int n, int n_threads, const std::function<void(int)>& fn) {
    if (n_threads <= 1 || n <= 1) {
        for (int i = 0; i < n; ++i) fn(i);
        return;
    }
    n_threads = std::min(n_threads, n);
    std::vector<std::thread> workers;
    std::exception_ptr error;
    std::mutex error_mutex;
    for (int t = 0; t < n_threads; ++t) {
        workers.emplace_back([&, t] {
            try {
                for (int i = t; i < n; i += n_threads) fn(i);
            } catch (...) {
                std::lock_guard<std::mutex> lock(error_mutex);
                if (!error) error = std::current_exception();
            }
        });
    }
    for (auto& w : workers) w.join();
    if (error) std::rethrow_exception(error);
}

} // namespace drdid

#endif
