#pragma once

// Static-chunk data parallelism for embarrassingly parallel loops
// (dataset solves, batched surrogate inference).  Thread count comes
// from VFLOW_THREADS when set, otherwise the hardware count.

#include <cstdlib>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

#include "vflow/array.hpp"

namespace vflow {

inline std::size_t thread_count() {
  if (const char* env = std::getenv("VFLOW_THREADS")) {
    const long v = std::strtol(env, nullptr, 10);
    if (v < 1) throw ConfigError("VFLOW_THREADS must be a positive integer");
    return std::size_t(v);
  }
  const unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : hw;
}

// Runs fn(i) for i in [0, n) across threads; each index runs exactly
// once.  The first exception thrown by any worker is rethrown here.
template <class Fn>
void parallel_for(std::size_t n, Fn&& fn, std::size_t n_threads = 0) {
  if (n == 0) return;
  const std::size_t T = std::min(n, n_threads ? n_threads : thread_count());
  if (T == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::exception_ptr err;
  std::mutex err_mu;
  std::vector<std::thread> pool;
  pool.reserve(T);
  for (std::size_t w = 0; w < T; ++w) {
    const std::size_t lo = n * w / T, hi = n * (w + 1) / T;
    pool.emplace_back([&, lo, hi] {
      try {
        for (std::size_t i = lo; i < hi; ++i) fn(i);
      } catch (...) {
        std::lock_guard<std::mutex> g(err_mu);
        if (!err) err = std::current_exception();
      }
    });
  }
  for (auto& th : pool) th.join();
  if (err) std::rethrow_exception(err);
}

}  // namespace vflow
