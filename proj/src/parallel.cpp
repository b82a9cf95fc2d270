#include "progdit/parallel.hpp"

#include <atomic>
#include <cstdlib>
#include <stdexcept>
#include <mutex>
#include <thread>
#include <vector>

#include "progdit/tensor.hpp"

namespace progdit {

int resolve_threads(int requested) {
  if (requested > 0) return requested;
  if (const char* env = std::getenv("PROGDIT_THREADS")) {
    const int v = std::atoi(env);
    if (v < 1) throw std::invalid_argument("PROGDIT_THREADS must be a positive integer");
    return v;
  }
  return 1;
}

void parallel_for(int64_t n, int threads, const std::function<void(int64_t)>& fn) {
  threads = resolve_threads(threads);
  if (threads <= 1 || n <= 1) {
    for (int64_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<int64_t> next{0};
  std::vector<std::thread> pool;
  std::exception_ptr error;
  std::mutex error_mu;
  for (int t = 0; t < threads; ++t) {
    pool.emplace_back([&]() {
      NoGradGuard ng;
      for (;;) {
        const int64_t i = next.fetch_add(1);
        if (i >= n) return;
        try {
          fn(i);
        } catch (...) {
          std::lock_guard<std::mutex> lock(error_mu);
          if (!error) error = std::current_exception();
          return;
        }
      }
    });
  }
  for (auto& th : pool) th.join();
  if (error) std::rethrow_exception(error);
}

}  // namespace progdit
