#include "testlet/parallel.hpp"

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace testlet {

int worker_limit() {
    int limit = static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
    if (const char* env = std::getenv("TESTLET_THREADS")) {
        const int requested = std::atoi(env);
        if (requested > 0) limit = std::min(limit, requested);
    }
    return limit;
}

void parallel_for(int n, int workers, const std::function<void(int)>& task) {
    if (n <= 0) return;
    if (workers <= 0) workers = worker_limit();
    workers = std::min(workers, n);
    if (workers == 1) {
        for (int i = 0; i < n; ++i) task(i);
        return;
    }
    std::atomic<int> next{0};
    std::exception_ptr error;
    std::mutex error_mutex;
    auto worker = [&] {
        for (int i = next++; i < n; i = next++) {
            try {
                task(i);
            } catch (...) {
                std::lock_guard lock(error_mutex);
                if (!error) error = std::current_exception();
            }
        }
    };
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
    if (error) std::rethrow_exception(error);
}

}  // namespace testlet
