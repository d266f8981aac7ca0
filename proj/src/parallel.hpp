#pragma once

#include <algorithm>
#include <atomic>
#include <cstdint>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace nelastic {

/// Worker count used by replicated estimators (0 = hardware concurrency).
void set_worker_count(unsigned workers) noexcept;
[[nodiscard]] unsigned worker_count() noexcept;

/// Runs `body(chunk, begin, end)` for fixed-size chunks of [0, n) on the
/// worker pool and folds the per-chunk partials in chunk order, so the result
/// does not depend on scheduling. `Partial` must be default-constructible and
/// expose `merge(const Partial&)`.
template <class Partial, class Body>
Partial replicate(std::uint64_t n, std::uint64_t chunk_size, Body&& body) {
    if (n == 0) {
        return Partial{};
    }
    chunk_size = std::max<std::uint64_t>(chunk_size, 1);
    const std::uint64_t chunks = (n + chunk_size - 1) / chunk_size;
    std::vector<Partial> partials(chunks);

    std::atomic<std::uint64_t> next{0};
    std::exception_ptr failure;
    std::mutex failure_mutex;
    auto worker = [&]() {
        for (;;) {
            const std::uint64_t c = next.fetch_add(1);
            if (c >= chunks) {
                return;
            }
            try {
                const std::uint64_t begin = c * chunk_size;
                const std::uint64_t end = std::min(n, begin + chunk_size);
                partials[c] = body(c, begin, end);
            } catch (...) {
                std::lock_guard lock(failure_mutex);
                if (!failure) {
                    failure = std::current_exception();
                }
                next.store(chunks);
                return;
            }
        }
    };

    const unsigned workers =
        static_cast<unsigned>(std::min<std::uint64_t>(worker_count(), chunks));
    if (workers <= 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        pool.reserve(workers);
        for (unsigned w = 0; w < workers; ++w) {
            pool.emplace_back(worker);
        }
        for (auto& t : pool) {
            t.join();
        }
    }
    if (failure) {
        std::rethrow_exception(failure);
    }

    Partial total = std::move(partials.front());
    for (std::uint64_t c = 1; c < chunks; ++c) {
        total.merge(partials[c]);
    }
    return total;
}

}  // namespace nelastic
