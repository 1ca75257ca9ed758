#pragma once

#include <algorithm>
#include <cstddef>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace camid {

/// Runs fn(i) for i in [0, n) on up to `workers` threads. Items are assigned
/// round-robin, so any fn that only writes slot i gives results independent of
/// the worker count. The first exception thrown by any item is rethrown.
template <typename Fn>
void parallel_for(std::size_t n, int workers, Fn&& fn) {
  const auto threads = static_cast<std::size_t>(std::max(1, workers));
  if (threads == 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::exception_ptr failure;
  std::mutex failure_mutex;
  {
    std::vector<std::jthread> pool;
    const std::size_t used = std::min(threads, n);
    pool.reserve(used);
    for (std::size_t t = 0; t < used; ++t) {
      pool.emplace_back([&, t] {
        for (std::size_t i = t; i < n; i += used) {
          try {
            fn(i);
          } catch (...) {
            std::lock_guard lock(failure_mutex);
            if (!failure) failure = std::current_exception();
            return;
          }
        }
      });
    }
  }
  if (failure) std::rethrow_exception(failure);
}

}  // namespace camid
