#include "diffcollage/parallel.hpp"

#include <atomic>
#include <exception>

namespace dc {

namespace {

struct ForkJoin {
    std::size_t n = 0;
    std::function<void(std::size_t)> fn;
    std::atomic<std::size_t> next{0};
    std::atomic<std::size_t> done{0};
    std::mutex mutex;
    std::condition_variable cv;
    std::exception_ptr error;

    void drain()
    {
        for (std::size_t i = next.fetch_add(1); i < n; i = next.fetch_add(1)) {
            try {
                fn(i);
            } catch (...) {
                std::lock_guard lock(mutex);
                if (!error) {
                    error = std::current_exception();
                }
            }
            if (done.fetch_add(1) + 1 == n) {
                std::lock_guard lock(mutex);
                cv.notify_all();
            }
        }
    }
};

} // namespace

WorkerPool::WorkerPool(std::size_t workers)
{
    const std::size_t extra = workers > 1 ? workers - 1 : 0;
    threads_.reserve(extra);
    for (std::size_t i = 0; i < extra; ++i) {
        threads_.emplace_back([this](std::stop_token stop) { run_worker(stop); });
    }
}

WorkerPool::~WorkerPool()
{
    for (auto& t : threads_) {
        t.request_stop();
    }
    cv_.notify_all();
}

void WorkerPool::post(std::function<void()> task)
{
    {
        std::lock_guard lock(mutex_);
        tasks_.push(std::move(task));
    }
    cv_.notify_one();
}

void WorkerPool::run_worker(std::stop_token stop)
{
    while (true) {
        std::function<void()> task;
        {
            std::unique_lock lock(mutex_);
            if (!cv_.wait(lock, stop, [this] { return !tasks_.empty(); })) {
                return;
            }
            task = std::move(tasks_.front());
            tasks_.pop();
        }
        task();
    }
}

void WorkerPool::parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn)
{
    if (n == 0) {
        return;
    }
    auto job = std::make_shared<ForkJoin>();
    job->n = n;
    job->fn = fn;
    const std::size_t helpers = std::min(threads_.size(), n - 1);
    for (std::size_t h = 0; h < helpers; ++h) {
        post([job] { job->drain(); });
    }
    job->drain();
    {
        std::unique_lock lock(job->mutex);
        job->cv.wait(lock, [&] { return job->done.load() == n; });
    }
    if (job->error) {
        std::rethrow_exception(job->error);
    }
}

} // namespace dc
