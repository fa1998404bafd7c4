#pragma once

#include <exception>
#include <mutex>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace bnngp {

/// Runs body(i) for i in [0, count) on up to `threads` OpenMP threads. Iterations
/// must write disjoint outputs. The exception from the lowest failing index wins.
template <class Body>
void parallel_for(int count, int threads, Body&& body) {
  if (threads <= 1 || count <= 1) {
    for (int i = 0; i < count; ++i) body(i);
    return;
  }
  std::exception_ptr error;
  int error_at = count;
  std::mutex guard;
#ifdef _OPENMP
#pragma omp parallel for schedule(dynamic, 1) num_threads(threads)
#endif
  for (int i = 0; i < count; ++i) {
    try {
      body(i);
    } catch (...) {
      std::lock_guard lock(guard);
      if (i < error_at) {
        error_at = i;
        error = std::current_exception();
      }
    }
  }
  if (error) std::rethrow_exception(error);
}

}  // namespace bnngp
