#include "grbsde/parallel.hpp"

#include <atomic>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace grbsde {

namespace {

std::atomic<int> g_override{0};

int env_workers() {
    const char* raw = std::getenv("GRBSDE_THREADS");
    if (raw == nullptr || *raw == '\0') return 0;
    char* end = nullptr;
    long parsed = std::strtol(raw, &end, 10);
    if (end == raw || *end != '\0' || parsed < 1 || parsed > 4096) return 0;
    return static_cast<int>(parsed);
}

}  // namespace

int worker_count() {
    int forced = g_override.load(std::memory_order_relaxed);
    if (forced > 0) return forced;
    int from_env = env_workers();
    if (from_env > 0) return from_env;
    unsigned hw = std::thread::hardware_concurrency();
    return hw == 0 ? 1 : static_cast<int>(hw);
}

void set_worker_override(int workers) {
    g_override.store(workers > 0 ? workers : 0, std::memory_order_relaxed);
}

void parallel_for(std::size_t n, std::size_t grain, const std::function<void(std::size_t)>& fn) {
    if (n == 0) return;
    if (grain == 0) grain = 1;
    std::size_t parts = n / grain;
    std::size_t workers = static_cast<std::size_t>(worker_count());
    if (parts > workers) parts = workers;
    if (parts <= 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }

    // Contiguous blocks; block boundaries depend only on n and parts, and each
    // index writes its own data, so results do not depend on the worker count.
    std::exception_ptr first_error;
    std::mutex error_lock;
    auto run_block = [&](std::size_t begin, std::size_t end) {
        try {
            for (std::size_t i = begin; i < end; ++i) fn(i);
        } catch (...) {
            std::lock_guard<std::mutex> hold(error_lock);
            if (!first_error) first_error = std::current_exception();
        }
    };

    std::vector<std::thread> pool;
    pool.reserve(parts - 1);
    std::size_t chunk = n / parts;
    std::size_t extra = n % parts;
    std::size_t begin = 0;
    for (std::size_t part = 0; part < parts; ++part) {
        std::size_t end = begin + chunk + (part < extra ? 1 : 0);
        if (part + 1 == parts) {
            run_block(begin, end);
        } else {
            pool.emplace_back(run_block, begin, end);
        }
        begin = end;
    }
    for (auto& worker : pool) worker.join();
    if (first_error) std::rethrow_exception(first_error);
}

}  // namespace grbsde
