#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace percsens {

namespace detail {
inline std::atomic<std::size_t>& default_thread_count() {
  static std::atomic<std::size_t> n{1};
  return n;
}
}  // namespace detail

/// Caps the worker count used when callers pass threads = 0.
inline void set_default_threads(std::size_t n) { detail::default_thread_count() = std::max<std::size_t>(1, n); }
inline std::size_t default_threads() { return detail::default_thread_count(); }

// Runs fn(i) for i in [0, n). Work is split into contiguous blocks; fn must
// only write to state owned by index i so that results do not depend on the
// thread count. The first exception thrown (lowest block) is rethrown.
template <typename Fn>
void parallel_for(std::size_t n, std::size_t threads, Fn&& fn) {
  if (threads == 0) threads = default_threads();
  threads = std::min(threads, n);
  if (threads <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::exception_ptr> errors(threads);
  std::vector<std::thread> pool;
  pool.reserve(threads);
  for (std::size_t t = 0; t < threads; ++t) {
    const std::size_t begin = n * t / threads;
    const std::size_t end = n * (t + 1) / threads;
    pool.emplace_back([&, t, begin, end] {
      try {
        for (std::size_t i = begin; i < end; ++i) fn(i);
      } catch (...) {
        errors[t] = std::current_exception();
      }
    });
  }
  for (auto& th : pool) th.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

}  // namespace percsens
