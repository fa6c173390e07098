// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <exception>
#include <functional>
#include <mutex>
#include <thread>
#include <utility>
#include <vector>

#include "stepwise/errors.hpp"

namespace stepwise {

/// Runs `fn(i)` for i in [0, n) across at most `workers` threads and returns
/// the results in index order, so parallel runs emit byte-identical output.
/// Work is claimed from a shared counter; the first exception wins, later
/// items still in flight finish but no new items start. `cancelled` (when
/// given) stops new items from starting; completed items keep their results,
/// and the caller decides what a partial batch means.
template <typename Result>
std::vector<Result> run_indexed(
    size_t n, int workers, const std::function<Result(size_t)>& fn,
    const std::atomic<bool>* cancelled = nullptr,
    std::vector<char>* completed_out = nullptr) {
    if (workers < 1) throw DomainError("worker count must be >= 1");
    if (!fn) throw DomainError("worker function must be set");

    std::vector<Result> results(n);
    // vector<char>, not vector<bool>: each worker writes its own byte.
    std::vector<char> completed(n, 0);
    std::atomic<size_t> next{0};
    std::atomic<bool> failed{false};
    std::exception_ptr first_error;
    std::mutex error_mutex;

    auto worker = [&] {
        for (;;) {
            if (failed.load() || (cancelled && cancelled->load())) return;
            const size_t i = next.fetch_add(1);
            if (i >= n) return;
            try {
                results[i] = fn(i);
                completed[i] = 1;  // each index touched by one thread only
            } catch (...) {
                std::lock_guard<std::mutex> lock(error_mutex);
                if (!first_error) first_error = std::current_exception();
                failed.store(true);
                return;
            }
        }
    };

    const int spawn =
        static_cast<int>(std::min<size_t>(static_cast<size_t>(workers), n));
    if (spawn <= 1) {
        worker();
    } else {
        std::vector<std::thread> threads;
        threads.reserve(static_cast<size_t>(spawn));
        for (int t = 0; t < spawn; ++t) threads.emplace_back(worker);
        for (auto& t : threads) t.join();
    }

    if (first_error) std::rethrow_exception(first_error);
    if (completed_out) *completed_out = std::move(completed);
    return results;
}

}  // namespace stepwise
