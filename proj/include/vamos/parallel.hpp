#ifndef VAMOS_PARALLEL_HPP
#define VAMOS_PARALLEL_HPP

#include <algorithm>
#include <atomic>
#include <condition_variable>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <variant>
#include <vector>

namespace vamos {

/// `requested` workers (0: one per hardware thread), capped by VAMOS_THREADS.
inline std::size_t worker_count(std::size_t requested = 0) {
    std::size_t n = requested ? requested : std::max(1u, std::thread::hardware_concurrency());
    if (const char* e = std::getenv("VAMOS_THREADS")) {
        const long cap = std::strtol(e, nullptr, 10);
        if (cap > 0) n = std::min(n, std::size_t(cap));
    }
    return std::max<std::size_t>(1, n);
}

/// Parallel ordered map: computes f(i) for i in [0, n) on `threads` workers
/// and hands results to `sink` strictly in index order on the calling thread.
template <typename R, typename F, typename Sink>
void ordered_parallel_map(std::size_t n, std::size_t threads, F&& f, Sink&& sink) {
    using Slot = std::optional<std::variant<R, std::string>>;
    std::vector<Slot> slots(n);
    std::mutex mu;
    std::condition_variable cv;
    std::atomic<std::size_t> next{0};
    std::atomic<bool> stop{false};
    auto work = [&] {
        while (!stop) {
            const std::size_t i = next++;
            if (i >= n) break;
            std::variant<R, std::string> r;
            try {
                r = f(i);
            } catch (const std::exception& e) {
                r = std::string(e.what());
            }
            {
                std::lock_guard<std::mutex> lk(mu);
                slots[i] = std::move(r);
            }
            cv.notify_all();
        }
    };
    threads = std::min(threads, std::max<std::size_t>(1, n));
    std::vector<std::thread> pool;
    for (std::size_t t = 1; t < threads; ++t) pool.emplace_back(work);
    std::exception_ptr failure;
    if (threads == 1) work();
    for (std::size_t i = 0; i < n && !failure; ++i) {
        std::variant<R, std::string> r;
        {
            std::unique_lock<std::mutex> lk(mu);
            cv.wait(lk, [&] { return slots[i].has_value(); });
            r = std::move(*slots[i]);
            slots[i].reset();
        }
        try {
            sink(i, std::move(r));
        } catch (...) {
            failure = std::current_exception();
            stop = true;
        }
    }
    stop = true;
    for (auto& t : pool) t.join();
    if (failure) std::rethrow_exception(failure);
}

}  // namespace vamos

#endif  // VAMOS_PARALLEL_HPP
