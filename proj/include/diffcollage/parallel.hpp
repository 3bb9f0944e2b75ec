#pragma once

#include <condition_variable>
#include <cstddef>
#include <functional>
#include <memory>
#include <mutex>
#include <queue>
#include <thread>
#include <vector>

namespace dc {

/// Fixed-size worker pool with a fork-join parallel_for.
///
/// The calling thread always participates in its own parallel_for, so nested
/// calls issued from inside a pool task make progress even when every worker
/// is busy. Results are expected to land in per-index slots; the pool never
/// reduces anything itself.
class WorkerPool {
public:
    /// `workers` is the total parallelism including the caller; 1 means serial.
    explicit WorkerPool(std::size_t workers = 1);
    ~WorkerPool();

    WorkerPool(const WorkerPool&) = delete;
    WorkerPool& operator=(const WorkerPool&) = delete;

    std::size_t workers() const noexcept { return threads_.size() + 1; }

    /// Calls fn(i) for every i in [0, n). Rethrows the first exception raised.
    void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

private:
    void run_worker(std::stop_token stop);
    void post(std::function<void()> task);

    std::mutex mutex_;
    std::condition_variable_any cv_;
    std::queue<std::function<void()>> tasks_;
    std::vector<std::jthread> threads_;
};

/// Runs fn over [0, n) on `pool` when given, serially otherwise.
inline void for_each_index(WorkerPool* pool, std::size_t n, const std::function<void(std::size_t)>& fn)
{
    if (pool == nullptr || pool->workers() == 1 || n <= 1) {
        for (std::size_t i = 0; i < n; ++i) {
            fn(i);
        }
        return;
    }
    pool->parallel_for(n, fn);
}

} // namespace dc
