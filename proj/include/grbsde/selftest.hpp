#ifndef GRBSDE_SELFTEST_HPP
#define GRBSDE_SELFTEST_HPP

#include <iosfwd>

namespace grbsde {

/**
 * Runs the built-in acceptance suite: nine numbered checks covering closed
 * forms, the classical reduction, penalization decay rates, residual and
 * Cauchy decay, uniform bounds, the comparison sweep, martingale-defect
 * tripwires and byte-level determinism. Prints one [PASS]/[FAIL] line per
 * check to `out` with the measured values and pinned tolerances.
 *
 * Returns 0 when every check passes, 3 otherwise. `corrupt_defects` injects
 * a fake martingale defect into one solved bundle before the tripwire check,
 * proving the suite can fail (negative control).
 */
int run_selftest(std::ostream& out, bool corrupt_defects = false);

}  // namespace grbsde

#endif
