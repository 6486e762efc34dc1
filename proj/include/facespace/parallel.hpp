#pragma once

#include <cstddef>
#include <exception>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace facespace {

// Caps the worker count for subsequent parallel regions. 0 keeps the runtime default.
inline void set_thread_count(int threads) {
#ifdef _OPENMP
    if (threads > 0) omp_set_num_threads(threads);
#else
    (void)threads;
#endif
}

inline int thread_count() {
#ifdef _OPENMP
    return omp_get_max_threads();
#else
    return 1;
#endif
}

// Runs body(i) for i in [0, n). Each index must write only to its own outputs;
// results are then independent of the worker count. If any call throws, the
// exception from the lowest failing index is rethrown after the loop.
template <typename Body>
void parallel_for(std::size_t n, Body&& body) {
#ifdef _OPENMP
    const auto count = static_cast<std::ptrdiff_t>(n);
    std::exception_ptr first_error;
    std::ptrdiff_t first_index = count;
#pragma omp parallel for schedule(dynamic, 1)
    for (std::ptrdiff_t i = 0; i < count; ++i) {
        try {
            body(static_cast<std::size_t>(i));
        } catch (...) {
#pragma omp critical(facespace_parallel_error)
            {
                if (i < first_index) {
                    first_index = i;
                    first_error = std::current_exception();
                }
            }
        }
    }
    if (first_error) std::rethrow_exception(first_error);
#else
    for (std::size_t i = 0; i < n; ++i) body(i);
#endif
}

} // namespace facespace
