#pragma once

#include <cstddef>
#include <functional>

namespace nnspec {

// Worker count: set_thread_count() override, else SPECTRAL_THREADS, else
// hardware concurrency.
int thread_count();
void set_thread_count(int n);  // n <= 0 clears the override

// Calls body(begin, end) on contiguous chunks covering [0, n). Chunks are
// handed out dynamically, so the body must only write state owned by its
// indices. Exceptions from any chunk are rethrown on the calling thread.
void parallel_for(std::size_t n, std::size_t grain,
                  const std::function<void(std::size_t, std::size_t)>& body);

}  // namespace nnspec
