#pragma once

#include <algorithm>
#include <atomic>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace triggerlab {

/// Runs fn(0..n-1) across `jobs` threads. Each index must be independent
/// and write only its own output slot, so results are identical for any
/// job count. The first exception is rethrown after all threads join.
template <typename Fn>
void parallel_for(long n, int jobs, Fn&& fn) {
    jobs = static_cast<int>(std::min<long>(std::max(jobs, 1), std::max(n, 1L)));
    if (jobs <= 1) {
        for (long i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<long> next{0};
    std::mutex error_mutex;
    std::exception_ptr first_error;
    std::vector<std::thread> pool;
    pool.reserve(jobs);
    for (int j = 0; j < jobs; ++j) {
        pool.emplace_back([&] {
            for (long i; (i = next.fetch_add(1)) < n;) {
                try {
                    fn(i);
                } catch (...) {
                    std::lock_guard<std::mutex> lock(error_mutex);
                    if (!first_error) first_error = std::current_exception();
                    return;
                }
            }
        });
    }
    for (std::thread& t : pool) t.join();
    if (first_error) std::rethrow_exception(first_error);
}

}  // namespace triggerlab
