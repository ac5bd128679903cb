/// @file parallel.hpp
/// @brief Deterministic fork-join loop over independent indices (typically z slices).

#pragma once

#include <algorithm>
#include <atomic>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace pvseg {

namespace detail {
inline std::atomic<int>& worker_limit() {
  static std::atomic<int> limit{0};
  return limit;
}
}  // namespace detail

/// Caps the number of workers; 0 means hardware concurrency.
inline void set_thread_count(int n) { detail::worker_limit() = std::max(0, n); }

inline int thread_count() {
  const int limit = detail::worker_limit();
  if (limit > 0) return limit;
  return std::max(1u, std::thread::hardware_concurrency());
}

/// Calls body(n) for every n in [begin, end). Each index must write disjoint outputs;
/// results are then independent of the worker count.
template <class Body>
void parallel_for(int begin, int end, Body&& body) {
  const int count = end - begin;
  if (count <= 0) return;
  const int workers = std::min(thread_count(), count);
  if (workers <= 1) {
    for (int n = begin; n < end; ++n) body(n);
    return;
  }
  std::atomic<int> next{begin};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  auto run = [&] {
    try {
      for (int n = next++; n < end; n = next++) body(n);
    } catch (...) {
      std::lock_guard lock(failure_mutex);
      if (!failure) failure = std::current_exception();
      next = end;
    }
  };
  std::vector<std::jthread> pool;
  pool.reserve(workers - 1);
  for (int w = 1; w < workers; ++w) pool.emplace_back(run);
  run();
  pool.clear();
  if (failure) std::rethrow_exception(failure);
}

}  // namespace pvseg
