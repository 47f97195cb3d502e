#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdlib>
#include <exception>
#include <string>
#include <thread>
#include <vector>

namespace flowreg {

namespace detail {
inline thread_local std::size_t thread_limit_override = 0;
}

/// Worker count from FLOWREG_THREADS (0 or unset = hardware concurrency, 1 = deterministic serial mode).
inline std::size_t configured_threads() {
  if (detail::thread_limit_override != 0) return detail::thread_limit_override;
  std::size_t n = 0;
  if (const char* env = std::getenv("FLOWREG_THREADS")) {
    try {
      n = static_cast<std::size_t>(std::stoul(env));
    } catch (const std::exception&) {
      n = 0;
    }
  }
  if (n == 0) n = std::max(1u, std::thread::hardware_concurrency());
  return n;
}

inline bool deterministic_mode() { return configured_threads() == 1; }

/// Caps parallelism for the current thread (used when outer loops already run in parallel).
class ScopedThreadLimit {
 public:
  explicit ScopedThreadLimit(std::size_t n) : saved_(detail::thread_limit_override) {
    detail::thread_limit_override = n;
  }
  ~ScopedThreadLimit() { detail::thread_limit_override = saved_; }
  ScopedThreadLimit(const ScopedThreadLimit&) = delete;
  ScopedThreadLimit& operator=(const ScopedThreadLimit&) = delete;

 private:
  std::size_t saved_;
};

/// Runs fn(i) for i in [0, n) over contiguous chunks. fn must only write to
/// slots owned by i, which keeps results independent of the schedule.
template <class Fn>
void parallel_for(std::size_t n, Fn&& fn, std::size_t min_chunk = 256) {
  const std::size_t workers = std::min(configured_threads(), std::max<std::size_t>(1, n / min_chunk));
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(workers);
  const std::size_t chunk = (n + workers - 1) / workers;
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      ScopedThreadLimit inner(1);
      try {
        const std::size_t lo = w * chunk;
        const std::size_t hi = std::min(n, lo + chunk);
        for (std::size_t i = lo; i < hi; ++i) fn(i);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

}  // namespace flowreg
