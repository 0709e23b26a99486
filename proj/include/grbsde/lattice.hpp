#ifndef GRBSDE_LATTICE_HPP
#define GRBSDE_LATTICE_HPP

#include <cmath>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "grbsde/expr.hpp"

namespace grbsde {

/** Volatility band of the uncertain-volatility model, 0 < sigma_lo <= sigma_hi. */
struct GParams {
    double sigma_lo = 1.0;
    double sigma_hi = 1.0;

    double lo_sq() const { return sigma_lo * sigma_lo; }
    double hi_sq() const { return sigma_hi * sigma_hi; }
    bool degenerate() const { return sigma_lo == sigma_hi; }
    void validate() const {
        if (!(sigma_lo > 0.0) || !(sigma_hi >= sigma_lo))
            throw std::invalid_argument("volatility band requires 0 < sigma_lo <= sigma_hi");
    }
};

/**
 * The sublinear generator G(a) = (sigma_hi^2 a+ - sigma_lo^2 a-) / 2 acting on
 * second-difference values. Positive homogeneous, subadditive, monotone.
 */
inline double g_value(const GParams& p, double a) {
    return a >= 0.0 ? 0.5 * p.hi_sq() * a : 0.5 * p.lo_sq() * a;
}

/** Uniform time grid over [0, horizon] with spatial pitch h = sigma_hi*sqrt(dt). */
struct LatticeSpec {
    double horizon = 1.0;
    int steps = 1;
    double x0 = 0.0;

    double dt() const { return horizon / steps; }
    double h(const GParams& p) const { return p.sigma_hi * std::sqrt(dt()); }
    double time_at(int k) const { return (horizon * k) / steps; }
    void validate() const {
        if (!(horizon > 0.0)) throw std::invalid_argument("horizon must be positive");
        if (steps < 1) throw std::invalid_argument("steps must be >= 1");
        if (!std::isfinite(x0)) throw std::invalid_argument("x0 must be finite");
    }
};

/**
 * Values on the recombining cone: slice k holds 2k+1 entries for spatial
 * offsets j in [-k, k]. Storage is a flat pyramid (slice k starts at k*k).
 */
class NodeGrid {
public:
    NodeGrid() = default;
    explicit NodeGrid(int steps, double fill = 0.0)
        : steps_(steps), data_(static_cast<std::size_t>(steps + 1) * (steps + 1), fill) {
        if (steps < 0) throw std::invalid_argument("steps must be >= 0");
    }

    int steps() const { return steps_; }
    int slice_size(int k) const { return 2 * k + 1; }

    double& at(int k, int j) { return data_[index(k, j)]; }
    double at(int k, int j) const { return data_[index(k, j)]; }

    std::span<double> slice(int k) {
        return {data_.data() + static_cast<std::size_t>(k) * k, static_cast<std::size_t>(2 * k + 1)};
    }
    std::span<const double> slice(int k) const {
        return {data_.data() + static_cast<std::size_t>(k) * k, static_cast<std::size_t>(2 * k + 1)};
    }

    const std::vector<double>& raw() const { return data_; }

private:
    std::size_t index(int k, int j) const {
        return static_cast<std::size_t>(k) * k + static_cast<std::size_t>(j + k);
    }

    int steps_ = 0;
    std::vector<double> data_{0.0};
};

/** Result of one adversarial trinomial step: value and the maximizing variance. */
struct StepValue {
    double value = 0.0;
    double sigma_sq = 0.0;
};

/**
 * One backward step of the worst-case trinomial scheme at a single node:
 * value = v_mid + dt * G(second difference). The maximizing variance is
 * sigma_hi^2 on ties.
 *
 * @param dt  time step; h must equal sigma_hi*sqrt(dt)
 */
StepValue one_step_sup(const GParams& p, double dt, double h, double v_minus, double v_mid,
                       double v_plus);

/** Backward-propagates a terminal slice through the sup-scheme; returns all slices. */
NodeGrid conditional_g_expectation(const LatticeSpec& lat, const GParams& p,
                                   std::vector<double> terminal_slice);

/** Same, with the terminal given as an expression in x. */
NodeGrid conditional_g_expectation(const LatticeSpec& lat, const GParams& p,
                                   const ExprAst& terminal);

/** Value at the root only, using O(N) rolling storage (for fine lattices). */
double g_expectation_value(const LatticeSpec& lat, const GParams& p, const ExprAst& terminal);

/**
 * Worst-case expectation of the time integral of a node-indexed field:
 * sup over volatility scenarios of E[ integral_0^T w(s, B_s) ds ].
 * Time quadrature is trapezoidal (weights 1/2 at k=0 and k=N), which makes
 * constant and classical Fubini-type integrands exact.
 */
double expected_path_integral(const LatticeSpec& lat, const GParams& p, const NodeGrid& integrand);

/** Largest value over all nodes of the grid. */
double node_sup(const NodeGrid& grid);

/** Largest absolute value over all nodes of the grid. */
double node_sup_abs(const NodeGrid& grid);

enum class PolicyKind { ConstantLo, ConstantHi, Argmax };

/**
 * A volatility scenario on the lattice: constant at either band edge, or the
 * per-node argmax recorded in a solved grid (sigma* field of a bundle).
 */
struct ScenarioPolicy {
    PolicyKind kind = PolicyKind::ConstantHi;
    const NodeGrid* sigma_star = nullptr;  // required for Argmax

    double sigma_sq_at(const GParams& p, int k, int j) const {
        switch (kind) {
            case PolicyKind::ConstantLo: return p.lo_sq();
            case PolicyKind::ConstantHi: return p.hi_sq();
            default: return sigma_star->at(k, j);
        }
    }
    static const char* name(PolicyKind kind) {
        switch (kind) {
            case PolicyKind::ConstantLo: return "constant-lo";
            case PolicyKind::ConstantHi: return "constant-hi";
            default: return "argmax";
        }
    }
};

/**
 * Classical expectation, under the fixed scenario, of the path sum of
 * per-step increments: E[ sum_{k<N} w(k, B_k) ]. The terminal slice of the
 * increment grid is not consumed.
 */
double expected_path_sum(const LatticeSpec& lat, const GParams& p, const ScenarioPolicy& policy,
                         const NodeGrid& increments);

/** Evaluates an expression of (t, x) on every node of the lattice. */
NodeGrid fill_grid(const LatticeSpec& lat, const GParams& p, const ExprAst& expr);

/** Serializes a grid as CSV with header "step,offset,x,value" and LF endings. */
std::string grid_to_csv(const LatticeSpec& lat, const GParams& p, const NodeGrid& grid);

}  // namespace grbsde

#endif
