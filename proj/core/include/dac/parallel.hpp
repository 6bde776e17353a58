#pragma once

#include <algorithm>
#include <atomic>
#include <exception>
#include <functional>
#include <mutex>
#include <thread>
#include <vector>

namespace dac {

// Runs fn(begin, end) over fixed-size shards of [0, count). Shard boundaries
// depend only on `shard_size`, so results that are reduced in shard order are
// identical for any worker count. fn must not touch shared mutable state.
inline void parallel_shards(int count, int shard_size,
                            const std::function<void(int, int)>& fn, int max_workers = 0) {
    if (count <= 0) return;
    shard_size = std::max(1, shard_size);
    const int shards = (count + shard_size - 1) / shard_size;
    int workers = max_workers > 0 ? max_workers
                                  : static_cast<int>(std::thread::hardware_concurrency());
    workers = std::clamp(workers, 1, shards);

    if (workers == 1) {
        for (int s = 0; s < shards; ++s) {
            fn(s * shard_size, std::min(count, (s + 1) * shard_size));
        }
        return;
    }

    std::exception_ptr error;
    std::mutex error_mutex;
    std::vector<std::thread> pool;
    pool.reserve(workers);
    std::atomic<int> next{0};
    for (int w = 0; w < workers; ++w) {
        pool.emplace_back([&] {
            for (;;) {
                int s = next.fetch_add(1);
                if (s >= shards) return;
                try {
                    fn(s * shard_size, std::min(count, (s + 1) * shard_size));
                } catch (...) {
                    std::lock_guard<std::mutex> lock(error_mutex);
                    if (!error) error = std::current_exception();
                    return;
                }
            }
        });
    }
    for (std::thread& t : pool) t.join();
    if (error) std::rethrow_exception(error);
}

}  // namespace dac
