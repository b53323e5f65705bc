#pragma once

#include "eki/core.hpp"

#include <exception>
#include <mutex>

namespace eki::detail {

// Runs body(j) for j in [0, n) under OpenMP. The first exception thrown by
// any iteration is rethrown on the calling thread.
template <class Body>
void parallel_members(Index n, Body&& body) {
  std::exception_ptr error;
  std::mutex error_mutex;
#pragma omp parallel for schedule(static)
  for (Index j = 0; j < n; ++j) {
    try {
      body(j);
    } catch (...) {
      std::lock_guard<std::mutex> lock(error_mutex);
      if (!error) error = std::current_exception();
    }
  }
  if (error) std::rethrow_exception(error);
}

}  // namespace eki::detail
