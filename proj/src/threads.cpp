#include "msdnn/threads.hpp"

#include <atomic>
#include <cstdlib>
#include <thread>
#include <vector>

namespace msdnn {

int max_threads() {
    static const int cached = [] {
        if (const char* env = std::getenv("MSDNN_THREADS")) {
            const int v = std::atoi(env);
            if (v >= 1) return v;
        }
        const unsigned hw = std::thread::hardware_concurrency();
        return hw ? static_cast<int>(hw) : 1;
    }();
    return cached;
}

void parallel_for(std::int64_t n, const std::function<void(std::int64_t)>& fn) {
    const int workers = static_cast<int>(std::min<std::int64_t>(max_threads(), n));
    if (workers <= 1) {
        for (std::int64_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<std::int64_t> next{0};
    std::vector<std::thread> pool;
    pool.reserve(static_cast<std::size_t>(workers));
    for (int w = 0; w < workers; ++w)
        pool.emplace_back([&] {
            for (std::int64_t i = next.fetch_add(1); i < n; i = next.fetch_add(1)) fn(i);
        });
    for (std::thread& t : pool) t.join();
}

} // namespace msdnn
