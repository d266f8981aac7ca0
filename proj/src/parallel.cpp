#include "parallel.hpp"

namespace nelastic {

namespace {
std::atomic<unsigned> g_workers{0};
}

void set_worker_count(unsigned workers) noexcept { g_workers.store(workers); }

unsigned worker_count() noexcept {
    const unsigned w = g_workers.load();
    if (w != 0) {
        return w;
    }
    return std::max(1u, std::thread::hardware_concurrency());
}

}  // namespace nelastic
