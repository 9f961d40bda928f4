#pragma once

#include <cstddef>
#include <functional>

namespace pillarseg {

// Worker threads to use: the PILLARSEG_THREADS environment variable when it
// holds a positive integer, otherwise std::thread::hardware_concurrency()
// (minimum 1).
std::size_t worker_count();

// Runs fn(i) for i in [0, n) across `workers` threads, work-stealing from a
// shared atomic counter. workers == 0 means worker_count(). With one worker
// everything runs on the calling thread in index order, which is the
// deterministic mode the trainer relies on. Exceptions from fn propagate to
// the caller (the first one thrown wins).
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn,
                  std::size_t workers = 0);

}  // namespace pillarseg
