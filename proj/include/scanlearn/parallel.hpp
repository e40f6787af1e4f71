#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <exception>
#include <thread>
#include <vector>

namespace scanlearn {

/// Runs fn(i) for every i in [0, count) on up to `workers` threads and
/// returns once all calls have finished. If any call throws, the exception
/// of the lowest failing index is rethrown after the barrier, so the error a
/// caller sees does not depend on scheduling.
template <typename Fn>
void parallel_for(std::size_t count, std::size_t workers, Fn&& fn) {
  if (count == 0) {
    return;
  }
  std::vector<std::exception_ptr> errors(count);
  const auto threads = std::clamp<std::size_t>(workers, 1, count);
  if (threads == 1) {
    for (std::size_t i = 0; i < count; ++i) {
      try {
        fn(i);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  } else {
    std::atomic<std::size_t> next{0};
    {
      std::vector<std::jthread> pool;
      pool.reserve(threads);
      for (std::size_t t = 0; t < threads; ++t) {
        pool.emplace_back([&] {
          for (auto i = next.fetch_add(1); i < count; i = next.fetch_add(1)) {
            try {
              fn(i);
            } catch (...) {
              errors[i] = std::current_exception();
            }
          }
        });
      }
    }  // jthreads join here
  }
  for (const auto& error : errors) {
    if (error) {
      std::rethrow_exception(error);
    }
  }
}

}  // namespace scanlearn
