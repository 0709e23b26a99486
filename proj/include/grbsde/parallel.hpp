#ifndef GRBSDE_PARALLEL_HPP
#define GRBSDE_PARALLEL_HPP

#include <cstddef>
#include <functional>

namespace grbsde {

/**
 * Number of workers available to parallel_for: the GRBSDE_THREADS environment
 * variable when set to a positive integer, otherwise the hardware
 * concurrency. A process-local override (used by the determinism self-check)
 * takes precedence over both.
 */
int worker_count();

/** Overrides the worker count for this process; 0 restores the default. */
void set_worker_override(int workers);

/**
 * Runs fn(i) for i in [0, n). Work is split into at most worker_count()
 * contiguous blocks of at least `grain` indices; small ranges run serially.
 * Each index is computed independently and written to its own slot, so the
 * result is bitwise identical for every worker count; reductions are left to
 * the caller.
 */
void parallel_for(std::size_t n, std::size_t grain, const std::function<void(std::size_t)>& fn);

}  // namespace grbsde

#endif
