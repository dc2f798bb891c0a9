#pragma once

#include <cstddef>
#include <exception>
#include <mutex>

#include "bset/kernels.hpp"

namespace bset {

// Runs body(i) for i in [0, n). With the parallel backend the iterations are
// spread over OpenMP threads; every iteration must write only its own output
// slot. The first exception thrown by any iteration is rethrown afterwards.
template <typename Body>
void parallel_for(std::size_t n, Body&& body,
                  kernels::Backend backend = kernels::default_backend()) {
  std::exception_ptr error;
  std::mutex error_mutex;
  const auto count = static_cast<std::ptrdiff_t>(n);
  const bool threaded = backend == kernels::Backend::parallel && n > 1;
#if defined(_OPENMP)
#pragma omp parallel for schedule(dynamic) if (threaded)
#endif
  for (std::ptrdiff_t i = 0; i < count; ++i) {
    try {
      body(static_cast<std::size_t>(i));
    } catch (...) {
      std::lock_guard<std::mutex> lock(error_mutex);
      if (!error) error = std::current_exception();
    }
  }
  (void)threaded;
  if (error) std::rethrow_exception(error);
}

}  // namespace bset
