#ifndef VPA_PARALLEL_HPP
#define VPA_PARALLEL_HPP
#include <cstddef>
#include <functional>

namespace vpa {

// Process-wide worker count for data-parallel loops. 0 means "use
// hardware_concurrency". The CLI sets this from --threads / VPA_THREADS.
void set_thread_count(unsigned n);
unsigned thread_count();

// Runs fn(i) for i in [0, n). Work is split into contiguous chunks, one
// chunk per worker; every index is computed by exactly one worker with a
// fixed inner order, so results are bitwise identical for any worker count.
void parallel_for(size_t n, const std::function<void(size_t)>& fn);

// Chunked variant: fn(begin, end) per contiguous range.
void parallel_for_chunked(size_t n, const std::function<void(size_t, size_t)>& fn);

} // namespace vpa
#endif
