#pragma once

#include <algorithm>
#include <atomic>
#include <cstdint>
#include <cstdlib>
#include <functional>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "chroma/error.hpp"

// Process-environment knobs. Exactly two are honored:
//   CHROMA_OUT_DIR  - overrides the output directory of any command
//   CHROMA_THREADS  - caps the number of worker threads (>= 1)

namespace chroma::env {

inline std::optional<std::string> output_dir_override() {
    const char* v = std::getenv("CHROMA_OUT_DIR");
    if (v == nullptr || *v == '\0') return std::nullopt;
    return std::string(v);
}

inline int thread_cap() {
    const char* v = std::getenv("CHROMA_THREADS");
    if (v != nullptr && *v != '\0') {
        char* end = nullptr;
        const long n = std::strtol(v, &end, 10);
        if (end == v || *end != '\0' || n < 1) {
            throw ConfigError("CHROMA_THREADS must be a positive integer, got '" + std::string(v) + "'");
        }
        return static_cast<int>(n);
    }
    const unsigned hw = std::thread::hardware_concurrency();
    return hw == 0 ? 1 : static_cast<int>(hw);
}

// Runs fn(i) for i in [0, n) on up to thread_cap() threads. Work items must
// not touch shared mutable state; deterministic results come from writing
// into pre-sized slots and reducing in index order afterwards.
inline void parallel_for(std::int64_t n, const std::function<void(std::int64_t)>& fn) {
    if (n <= 0) return;
    const int workers = static_cast<int>(std::min<std::int64_t>(n, thread_cap()));
    if (workers <= 1) {
        for (std::int64_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::vector<std::thread> pool;
    pool.reserve(static_cast<std::size_t>(workers));
    std::atomic<std::int64_t> next{0};
    std::exception_ptr first_error;
    std::mutex error_mutex;
    for (int w = 0; w < workers; ++w) {
        pool.emplace_back([&]() {
            for (;;) {
                const std::int64_t i = next.fetch_add(1);
                if (i >= n) return;
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
    for (auto& t : pool) t.join();
    if (first_error) std::rethrow_exception(first_error);
}

}  // namespace chroma::env
