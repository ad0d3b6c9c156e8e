// SPDX-License-Identifier: Apache-2.0
//
// Batch kernels run in one of two modes: a plain serial loop (the reference
// implementation used as ground truth in tests) and an OpenMP parallel loop.
// Both write results into caller-indexed slots and all reductions happen
// afterwards in slot order, so the two modes are bit-identical regardless of
// thread count.

#pragma once

#include <cstddef>
#include <span>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace mpo {

enum class ExecMode { serial, parallel };

// Apply fn(i) for i in [0, n).  fn must only touch its own slot i.
template <class Fn>
void for_each_index(std::size_t n, ExecMode mode, Fn&& fn) {
#ifdef _OPENMP
  if (mode == ExecMode::parallel) {
    const auto m = static_cast<long long>(n);
#pragma omp parallel for schedule(dynamic)
    for (long long i = 0; i < m; ++i) fn(static_cast<std::size_t>(i));
    return;
  }
#else
  (void)mode;
#endif
  for (std::size_t i = 0; i < n; ++i) fn(i);
}

// Sum per-slot vectors into out in slot order (deterministic reduction).
inline void reduce_ordered(std::span<const std::vector<double>> slots,
                           std::span<double> out) {
  for (const auto& s : slots)
    for (std::size_t j = 0; j < out.size(); ++j) out[j] += s[j];
}

inline int max_threads() {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

}  // namespace mpo
