#pragma once

#include <algorithm>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

#include "visil/tensor.hpp"

namespace visil {

/// Runs body(i) for i in [0, count) on up to `threads` threads. Work items
/// must write disjoint outputs; the assignment of items to threads never
/// affects what each item computes.
template <typename Body>
void parallel_for(Index count, int threads, Body&& body) {
    const int workers = static_cast<int>(std::min<Index>(std::max(threads, 1), count));
    if (workers <= 1) {
        for (Index i = 0; i < count; ++i) body(i);
        return;
    }
    std::exception_ptr failure;
    std::mutex failure_mutex;
    std::vector<std::thread> pool;
    pool.reserve(static_cast<std::size_t>(workers));
    for (int w = 0; w < workers; ++w)
        pool.emplace_back([&, w] {
            try {
                for (Index i = w; i < count; i += workers) body(i);
            } catch (...) {
                std::lock_guard lock(failure_mutex);
                if (!failure) failure = std::current_exception();
            }
        });
    for (auto& t : pool) t.join();
    if (failure) std::rethrow_exception(failure);
}

}  // namespace visil
