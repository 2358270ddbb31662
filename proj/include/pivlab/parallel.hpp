#pragma once

#include <algorithm>
#include <cstdlib>
#include <exception>
#include <string>
#include <thread>
#include <vector>

namespace pivlab {

// Worker count: PIVLAB_THREADS when set and positive, hardware concurrency otherwise.
inline int worker_count() {
  int hw = static_cast<int>(std::thread::hardware_concurrency());
  if (hw < 1) hw = 1;
  if (const char* env = std::getenv("PIVLAB_THREADS")) {
    try {
      const int cap = std::stoi(env);
      if (cap > 0) return std::min(cap, 256);
    } catch (...) {
    }
  }
  return hw;
}

// Runs fn(begin, end) over contiguous blocks of [0, n). Callers must only
// write to disjoint outputs per index. If blocks throw, the exception of the
// lowest block is rethrown so error reports do not depend on scheduling.
template <class Fn>
void parallel_for_blocks(int n, Fn&& fn) {
  const int workers = std::min(worker_count(), std::max(1, n / 256));
  if (workers <= 1) {
    fn(0, n);
    return;
  }
  std::vector<std::thread> threads;
  std::vector<std::exception_ptr> errors(static_cast<std::size_t>(workers));
  const int chunk = (n + workers - 1) / workers;
  for (int w = 0; w < workers; ++w) {
    const int begin = w * chunk;
    const int end = std::min(n, begin + chunk);
    if (begin >= end) break;
    threads.emplace_back([&, w, begin, end] {
      try {
        fn(begin, end);
      } catch (...) {
        errors[static_cast<std::size_t>(w)] = std::current_exception();
      }
    });
  }
  for (auto& t : threads) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

}  // namespace pivlab
