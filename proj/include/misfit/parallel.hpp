#pragma once

#include <cstddef>
#include <functional>
#include <span>

namespace misfit {

/// Worker count used by assembly loops (>= 1). Defaults to 1.
int thread_count();
void set_thread_count(int threads);

/// Calls body(begin, end) on disjoint contiguous chunks of [0, n). Bodies must
/// only write to per-index storage so results do not depend on the split.
void parallel_for(std::size_t n, const std::function<void(std::size_t, std::size_t)>& body);

/// Pairwise summation over a fixed binary tree of 64-element leaves; the result
/// depends only on the input order.
double ordered_sum(std::span<const double> values);

}  // namespace misfit
