#ifndef GRBSDE_DIAGNOSTICS_HPP
#define GRBSDE_DIAGNOSTICS_HPP

#include <string>
#include <utility>
#include <vector>

#include "grbsde/solver.hpp"

namespace grbsde {

/**
 * Knobs and tolerances for the verification suite. rate_window restricts the
 * penalty levels used by the log-log fits (0 leaves an end open); columns whose
 * values all sit below uniform_floor are treated as inactive rather than fed
 * into ratio or decay checks.
 */
struct DiagnosticsConfig {
    double alpha = 2.0;  // gap-estimate exponent, must be >= 2
    double rate_window_lo = 0.0;
    double rate_window_hi = 0.0;
    double uniform_floor = 1e-10;

    double slope_lo = -1.25;  // acceptance band for the violation decay rate
    double slope_hi = -0.75;
    double r2_min = 0.95;
    double decade_factor = 10.0;  // required end-to-end shrink of residuals and gaps
    double ratio_max = 1.5;       // max/min spread allowed for uniform-bound columns
    double comparison_tol = 1e-10;
    double martingale_tol = 1e-12;

    void validate() const;
};

/**
 * Approximate-Skorohod residuals of one bundle: worst-case expectations of
 * the path integrals of a_plus*(Y-L)^- and a_minus*(Y-U)^+. Nonnegative, and
 * exactly zero when no node violates the corresponding obstacle.
 */
std::pair<double, double> asc_residuals(const SolutionBundle& bundle);

/** (sup over nodes of (Y-U)^+, sup over nodes of (Y-L)^-); 0 for absent obstacles. */
std::pair<double, double> violation_norms(const SolutionBundle& bundle);

/** Least-squares fit of log(value) against log(level). */
struct FitResult {
    double slope = 0.0;
    double intercept = 0.0;
    double r_squared = 0.0;
    int points_used = 0;
    int zeros_excluded = 0;
};

/**
 * Fits log(value) ~ slope*log(level) + intercept. Points with value <= 0 are
 * excluded and counted; fewer than 3 usable points is an error.
 */
FitResult rate_fit(const std::vector<std::pair<double, double>>& points);

/** Successive sup-norm gaps between consecutive bundles of a ladder. */
std::vector<double> cauchy_report(const std::vector<SolutionBundle>& bundles);

/** Nodewise ordering check of two solved problems with ordered data. */
struct ComparisonResult {
    bool ok = true;
    double worst_violation = 0.0;  // sup over nodes of (Y1 - Y2)^+
    int step = -1;                 // location of the worst node (-1 when none)
    int offset = 0;
    double y0_first = 0.0;
    double y0_second = 0.0;
};

/**
 * Verifies the data ordering (terminal, obstacles at every node; drivers on a
 * fixed sample box of y,z) and then solves both problems at the given penalty,
 * asserting Y1 <= Y2 + tol at every node. Unordered data is an error.
 */
ComparisonResult comparison_check(const ProblemSpec& first, const ProblemSpec& second,
                                  double penalty, const LatticeSpec& lat, double tol = 1e-10);

/** Empirical form of the stability estimate for two problems sharing obstacles. */
struct GapCheck {
    double lhs = 0.0;    // |Y1(0) - Y2(0)|^alpha
    double rhs = 0.0;    // E[|terminal gap|^alpha] + path integral of |driver gap|^alpha
    double ratio = 0.0;  // lhs / rhs, the empirical stability constant
};

GapCheck apriori_gap_check(const ProblemSpec& first, const ProblemSpec& second, double penalty,
                           const LatticeSpec& lat, double alpha);

/**
 * Classical doubly reflected backward induction for the degenerate band
 * sigma_lo = sigma_hi: v = clamp(average + dt*f, L, U) with the single-sigma
 * trinomial average. Independent of the main solver's stepping code; requires
 * both obstacles.
 */
NodeGrid dynkin_oracle(const ProblemSpec& spec, const LatticeSpec& lat);

/**
 * Tripwire on the martingale-defect fields: (max over nodes of the positive
 * part of max(dk_lo, dk_hi), max over nodes of |max(dk_lo, dk_hi)|). Both are
 * zero for any correctly assembled bundle.
 */
std::pair<double, double> g_martingale_check(const SolutionBundle& bundle);

/** One ladder row of verification quantities at a single penalty level. */
struct LadderRow {
    double level = 0.0;
    double y0 = 0.0;
    double sup_abs_y = 0.0;
    double upper_violation = 0.0;
    double lower_violation = 0.0;
    double asc_plus = 0.0;
    double asc_minus = 0.0;
    double exp_a_plus = 0.0;
    double exp_a_minus = 0.0;
    double exp_neg_k = 0.0;  // largest per-policy expectation, a certified lower bound
    double exp_z_sq = 0.0;
    double dist_projected = 0.0;
    double cauchy_gap = 0.0;  // vs the previous level; meaningless on the first row
    bool has_cauchy = false;
};

/** Ladder rows plus fitted rates and pass/fail flags. */
struct DiagnosticsReport {
    std::vector<LadderRow> rows;
    FitResult upper_fit;
    bool upper_fit_ok = false;  // enough usable points for the fit
    FitResult lower_fit;
    bool lower_fit_ok = false;
    std::vector<double> cauchy_gaps;
    double projected_y0 = 0.0;

    bool rate_in_band = false;
    bool asc_plus_decaying = false;
    bool asc_minus_decaying = false;
    bool cauchy_decaying = false;
    bool uniform_ratios_ok = false;
    bool martingale_ok = false;

    /** One row per penalty level; stable column order, LF endings. */
    std::string to_csv() const;
    /** JSON summary with the fitted slopes and flags. */
    std::string to_json() const;
};

/** Builds the full verification report for a solved ladder. */
DiagnosticsReport ladder_report(const LadderResult& ladder, const DiagnosticsConfig& config);

}  // namespace grbsde

#endif
