#pragma once

#include <cstddef>
#include <utility>
#include <vector>

#if defined(_OPENMP)
#include <omp.h>
#endif

namespace her2ws {

/// Execution policy for the data-parallel kernels (inference, generation,
/// gradient accumulation, objective evaluation).
///
/// threads == 1 selects the serial reference path; threads == 0 uses all
/// hardware threads; threads > 1 pins the OpenMP team size. Every kernel is
/// written so the serial and parallel paths produce bit-identical results:
/// workers write to disjoint slots and floating-point reductions always fold
/// fixed-size blocks in index order.
struct ExecPolicy {
    int threads = 1;

    bool serial() const { return threads == 1; }

    int resolved_threads() const {
#if defined(_OPENMP)
        if (threads <= 0) return omp_get_max_threads();
        return threads;
#else
        return 1;
#endif
    }
};

template <typename Fn>
void parallel_for(std::ptrdiff_t n, const ExecPolicy& policy, Fn&& fn) {
    if (policy.serial()) {
        for (std::ptrdiff_t i = 0; i < n; ++i) fn(i);
        return;
    }
#if defined(_OPENMP)
#pragma omp parallel for schedule(static) num_threads(policy.resolved_threads())
    for (std::ptrdiff_t i = 0; i < n; ++i) fn(i);
#else
    for (std::ptrdiff_t i = 0; i < n; ++i) fn(i);
#endif
}

/// Fixed block size for ordered reductions. Partial sums are computed per
/// block (possibly in parallel) and folded serially in block order, so the
/// floating-point addition order is independent of the thread count.
inline constexpr std::ptrdiff_t kReduceBlock = 64;

/// Ordered blocked reduction: `partial(block_begin, block_end, acc)` fills a
/// per-block accumulator, `fold(total, acc)` merges them in block order.
template <typename Acc, typename PartialFn, typename FoldFn>
Acc blocked_reduce(std::ptrdiff_t n, const ExecPolicy& policy, PartialFn&& partial, FoldFn&& fold) {
    const std::ptrdiff_t blocks = (n + kReduceBlock - 1) / kReduceBlock;
    std::vector<Acc> acc(static_cast<size_t>(blocks));
    parallel_for(blocks, policy, [&](std::ptrdiff_t b) {
        const std::ptrdiff_t begin = b * kReduceBlock;
        const std::ptrdiff_t end = std::min(n, begin + kReduceBlock);
        partial(begin, end, acc[static_cast<size_t>(b)]);
    });
    Acc total{};
    for (std::ptrdiff_t b = 0; b < blocks; ++b) fold(total, acc[static_cast<size_t>(b)]);
    return total;
}

}  // namespace her2ws
