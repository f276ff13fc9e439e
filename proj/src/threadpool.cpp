#include "vista/threadpool.hpp"

#include <atomic>
#include <cstdlib>
#include <stdexcept>
#include <thread>

namespace vista {

int worker_count() {
    if (const char* env = std::getenv("VISTA_THREADS")) {
        const int n = std::atoi(env);
        if (n >= 1) return n;
    }
    const unsigned hc = std::thread::hardware_concurrency();
    return hc == 0 ? 1 : (int)hc;
}

void parallel_for(int n, const std::function<void(int)>& fn) {
    const int workers = std::min(worker_count(), n);
    if (workers <= 1) {
        for (int i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<int> next{0};
    std::exception_ptr first_error = nullptr;
    std::atomic<bool> failed{false};
    auto run = [&] {
        while (true) {
            const int i = next.fetch_add(1);
            if (i >= n || failed.load()) return;
            try {
                fn(i);
            } catch (...) {
                if (!failed.exchange(true)) first_error = std::current_exception();
                return;
            }
        }
    };
    std::vector<std::thread> threads;
    for (int w = 0; w < workers - 1; ++w) threads.emplace_back(run);
    run();
    for (auto& t : threads) t.join();
    if (failed.load() && first_error) std::rethrow_exception(first_error);
}

} // namespace vista
