#ifndef GRBSDE_SOLVER_HPP
#define GRBSDE_SOLVER_HPP

#include <optional>
#include <string>
#include <vector>

#include "grbsde/expr.hpp"
#include "grbsde/lattice.hpp"

namespace grbsde {

/**
 * Data of one backward equation: terminal payoff, driver f (plus an optional
 * volatility-weighted driver g entering as g*sigma^2*dt), and up to two
 * reflecting obstacles. Expressions use t,x for obstacles, x for the
 * terminal and t,x,y,z for drivers.
 */
struct ProblemSpec {
    GParams params;
    ExprAst terminal;
    ExprAst driver;
    std::optional<ExprAst> driver_g;
    std::optional<ExprAst> lower;
    std::optional<ExprAst> upper;
    double lipschitz = 0.0;  // Lipschitz bound of the drivers in (y, z)

    void validate() const;
};

/** Error raised by the backward solvers; carries a stable code and location. */
class SolverError : public std::runtime_error {
public:
    enum class Code { BadArgument, ObstacleOrdering, LipschitzPrecondition, RootSolve };

    SolverError(Code code, const std::string& message, int step = -1, int offset = 0)
        : std::runtime_error(message), code_(code), step_(step), offset_(offset) {}

    Code code() const { return code_; }
    int step() const { return step_; }
    int node_offset() const { return offset_; }

private:
    Code code_;
    int step_;
    int offset_;
};

/**
 * Full output of one backward solve. The reflection densities are
 * a_plus = n*(Y-L)^-, a_minus = n*(Y-U)^+ (for the projected solver, the
 * clamp slacks divided by dt). dk_lo/dk_hi hold the per-node gap between
 * each variance's one-step expectation and their maximum, so
 * max(dk_lo, dk_hi) = 0 and both are <= 0 at every node; sigma_star is the
 * maximizing variance (ties resolved to sigma_hi^2).
 */
struct SolutionBundle {
    LatticeSpec lattice;
    GParams params;
    double penalty = 0.0;
    bool projected = false;
    bool has_lower = false;
    bool has_upper = false;

    NodeGrid y;
    NodeGrid z;
    NodeGrid a_plus;
    NodeGrid a_minus;
    NodeGrid dk_lo;
    NodeGrid dk_hi;
    NodeGrid sigma_star;
    NodeGrid lower;  // obstacle values on the grid (when present)
    NodeGrid upper;

    double y0() const { return y.at(0, 0); }
};

/** Values produced by one backward step over a single slice. */
struct StepRow {
    std::vector<double> y, z, a_plus, a_minus, dk_lo, dk_hi, sigma_star;
};

/**
 * One implicit backward step at slice k from the already-solved slice k+1.
 * Solves, per node, y = max_sigma E_sigma[next] + dt*f(t,x,y,z)
 * + dt*n*(y-L)^- - dt*n*(y-U)^+ with z frozen at the central difference of
 * the next slice. Requires dt*lipschitz < 1.
 */
StepRow backward_step(const ProblemSpec& spec, const LatticeSpec& lat, int k,
                      std::span<const double> next_slice, double penalty);

/** Runs the penalized backward induction at a fixed penalty level n >= 0. */
SolutionBundle solve_penalized(const ProblemSpec& spec, const LatticeSpec& lat, double penalty);

/**
 * Obstacle projection scheme: the implicit unpenalized step clamped into
 * [L, U] at every node; the discrete Dynkin-game value used as the ladder
 * reference.
 */
SolutionBundle solve_projected(const ProblemSpec& spec, const LatticeSpec& lat);

/** Penalized solves along an increasing ladder plus the projected reference. */
struct LadderResult {
    std::vector<double> levels;
    std::vector<SolutionBundle> bundles;
    SolutionBundle projected;
};

LadderResult penalty_ladder(const ProblemSpec& spec, const LatticeSpec& lat,
                            const std::vector<double>& levels);

/**
 * Time series along one lattice path (moves in {-1,0,+1} per step): running
 * reflection processes A+/A- (densities times dt) and the scenario's
 * martingale-defect process K, which is nonincreasing and identically zero
 * under the argmax policy of the same bundle.
 */
struct PathSeries {
    std::vector<double> t, x, y, z, a_plus_cum, a_minus_cum, k_cum;

    std::string to_csv() const;
};

PathSeries extract_processes(const SolutionBundle& bundle, const std::vector<int>& moves,
                             const ScenarioPolicy& policy);

/** Serializes a bundle as CSV, one row per node, LF endings. */
std::string bundle_to_csv(const SolutionBundle& bundle);

}  // namespace grbsde

#endif
