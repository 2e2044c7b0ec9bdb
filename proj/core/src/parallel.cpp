#include "vpa/parallel.hpp"

#include <atomic>
#include <thread>
#include <vector>

namespace vpa {

namespace {
std::atomic<unsigned> g_threads{0};
}

void set_thread_count(unsigned n)
{
    g_threads.store(n);
}

unsigned thread_count()
{
    unsigned n = g_threads.load();
    if (n == 0) {
        n = std::thread::hardware_concurrency();
        if (n == 0)
            n = 1;
    }
    return n;
}

void parallel_for_chunked(size_t n, const std::function<void(size_t, size_t)>& fn)
{
    if (n == 0)
        return;
    const unsigned workers = std::min<size_t>(thread_count(), n);
    if (workers <= 1) {
        fn(0, n);
        return;
    }
    const size_t chunk = (n + workers - 1) / workers;
    std::vector<std::thread> pool;
    pool.reserve(workers - 1);
    for (unsigned w = 1; w < workers; ++w) {
        const size_t begin = w * chunk;
        const size_t end = std::min(n, begin + chunk);
        if (begin >= end)
            break;
        pool.emplace_back([&fn, begin, end] { fn(begin, end); });
    }
    fn(0, std::min(n, chunk));
    for (auto& t : pool)
        t.join();
}

void parallel_for(size_t n, const std::function<void(size_t)>& fn)
{
    parallel_for_chunked(n, [&fn](size_t begin, size_t end) {
        for (size_t i = begin; i < end; ++i)
            fn(i);
    });
}

} // namespace vpa
