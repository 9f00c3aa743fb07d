#ifndef WGFH_PARALLEL_HPP
#define WGFH_PARALLEL_HPP

#include <algorithm>
#include <cstddef>
#include <exception>
#include <future>
#include <vector>

namespace wgfh {

/// Runs fn(i) for i in [0, n) on up to `threads` workers (static block split).
/// The first exception thrown by a worker is rethrown after all workers finish.
template <typename Fn>
void parallel_for(std::size_t n, int threads, Fn&& fn) {
  const std::size_t workers = std::clamp<std::size_t>(threads > 0 ? std::size_t(threads) : 1, 1, std::max<std::size_t>(n, 1));
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::future<void>> jobs;
  jobs.reserve(workers);
  for (std::size_t w = 0; w < workers; ++w) {
    const std::size_t lo = n * w / workers, hi = n * (w + 1) / workers;
    jobs.push_back(std::async(std::launch::async, [lo, hi, &fn] {
      for (std::size_t i = lo; i < hi; ++i) fn(i);
    }));
  }
  std::exception_ptr first;
  for (auto& j : jobs) {
    try {
      j.get();
    } catch (...) {
      if (!first) first = std::current_exception();
    }
  }
  if (first) std::rethrow_exception(first);
}

}  // namespace wgfh

#endif  // WGFH_PARALLEL_HPP
