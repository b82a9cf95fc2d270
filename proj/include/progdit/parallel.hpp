#pragma once

#include <cstdint>
#include <functional>

namespace progdit {

// thread count policy: explicit value, else PROGDIT_THREADS, else 1
int resolve_threads(int requested);

// runs fn(i) for i in [0, n); results must go into pre-sized slots so the
// outcome is identical for any thread count. fn runs with tape recording
// disabled on worker threads.
void parallel_for(int64_t n, int threads, const std::function<void(int64_t)>& fn);

}  // namespace progdit
