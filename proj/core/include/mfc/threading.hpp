#ifndef MFC_THREADING_HPP
#define MFC_THREADING_HPP

#include <algorithm>
#include <exception>
#include <functional>
#include <mutex>
#include <thread>
#include <vector>

namespace mfc {

/// Runs body(begin, end) over contiguous chunks of [0, n). Results must be
/// written to disjoint slots; reductions belong outside this call so that
/// they are evaluated in a fixed order regardless of the thread count.
inline void parallel_for(int n, int threads, const std::function<void(int, int)>& body) {
    if (n <= 0) return;
    if (threads <= 1 || n == 1) {
        body(0, n);
        return;
    }
    const int workers = std::min(threads, n);
    std::vector<std::thread> pool;
    pool.reserve(static_cast<std::size_t>(workers));
    std::exception_ptr first_error;
    std::mutex err_mutex;
    for (int w = 0; w < workers; ++w) {
        const int begin = static_cast<int>(static_cast<long long>(n) * w / workers);
        const int end = static_cast<int>(static_cast<long long>(n) * (w + 1) / workers);
        pool.emplace_back([&, begin, end] {
            try {
                body(begin, end);
            } catch (...) {
                std::lock_guard<std::mutex> lock(err_mutex);
                if (!first_error) first_error = std::current_exception();
            }
        });
    }
    for (auto& t : pool) t.join();
    if (first_error) std::rethrow_exception(first_error);
}

}  // namespace mfc

#endif
