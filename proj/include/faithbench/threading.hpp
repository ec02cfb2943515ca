#ifndef FAITHBENCH_THREADING_HPP
#define FAITHBENCH_THREADING_HPP

#include <algorithm>
#include <cstddef>
#include <exception>
#include <functional>
#include <mutex>
#include <thread>
#include <vector>

namespace faithbench {

/// Runs fn(i) for i in [0, n) on up to `threads` workers (0 = hardware
/// default). Each index is processed exactly once; results must be written
/// to index-addressed slots so the outcome is independent of scheduling.
/// The first exception thrown by any worker is rethrown on the caller.
inline void parallel_for(std::size_t n, std::size_t threads,
                         const std::function<void(std::size_t)>& fn) {
  if (n == 0) return;
  std::size_t workers = threads == 0 ? std::thread::hardware_concurrency() : threads;
  workers = std::max<std::size_t>(1, std::min(workers, n));
  if (workers == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  std::mutex err_mutex;
  std::exception_ptr error;
  std::size_t chunk = (n + workers - 1) / workers;
  for (std::size_t w = 0; w < workers; ++w) {
    const std::size_t begin = w * chunk;
    const std::size_t end = std::min(n, begin + chunk);
    if (begin >= end) break;
    pool.emplace_back([&, begin, end]() {
      try {
        for (std::size_t i = begin; i < end; ++i) fn(i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(err_mutex);
        if (!error) error = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

}  // namespace faithbench

#endif
