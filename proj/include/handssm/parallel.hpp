#pragma once

#include <algorithm>
#include <cstddef>
#include <exception>
#include <thread>
#include <vector>

namespace handssm {

/// Number of workers used when a caller passes 0.
inline int default_threads() { return std::max(1u, std::thread::hardware_concurrency()); }

/// Calls f(i) for i in [0, n) over contiguous blocks. Results are independent of the thread
/// count as long as f(i) only writes state owned by index i. The first exception is rethrown.
template <typename F>
void parallel_for(std::size_t n, int threads, F&& f) {
    const std::size_t workers = std::min<std::size_t>(n, static_cast<std::size_t>(threads > 0 ? threads : default_threads()));
    if (workers <= 1) {
        for (std::size_t i = 0; i < n; ++i) f(i);
        return;
    }
    std::vector<std::exception_ptr> errors(workers);
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w)
        pool.emplace_back([&, w] {
            try {
                for (std::size_t i = n * w / workers; i < n * (w + 1) / workers; ++i) f(i);
            } catch (...) {
                errors[w] = std::current_exception();
            }
        });
    for (auto& t : pool) t.join();
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
}

}  // namespace handssm
