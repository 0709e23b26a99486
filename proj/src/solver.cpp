#include "grbsde/solver.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <utility>

#include "grbsde/csv.hpp"
#include "grbsde/parallel.hpp"

namespace grbsde {

namespace {

constexpr std::size_t kRowGrain = 64;
constexpr double kInf = std::numeric_limits<double>::infinity();

double neg_part(double a) { return a < 0.0 ? -a : 0.0; }
double pos_part(double a) { return a > 0.0 ? a : 0.0; }

void require_vars(const ExprAst& ast, const std::string& allowed, const char* what) {
    if (ast.empty())
        throw SolverError(SolverError::Code::BadArgument, std::string(what) + " expression is empty");
    for (char v : free_vars(ast)) {
        if (allowed.find(v) == std::string::npos)
            throw SolverError(SolverError::Code::BadArgument,
                              std::string(what) + " may not use variable '" + std::string(1, v) +
                                  "' (allowed: " + allowed + ")");
    }
}

/** Everything fixed at one node while the implicit equation is solved for y. */
struct NodeEquation {
    const ProblemSpec* spec = nullptr;
    double t = 0.0, x = 0.0, z = 0.0, dt = 0.0;
    double avg_lo = 0.0, avg_hi = 0.0;  // trinomial averages under each variance
    double lower_v = -kInf, upper_v = kInf;
    double penalty = 0.0;  // 0 disables the penalty terms
    bool has_g = false;

    double scenario_max(double ycand) const {
        if (!has_g) return std::max(avg_lo, avg_hi);
        double gv = evaluate(*spec->driver_g, EvalEnv{t, x, ycand, z});
        const GParams& p = spec->params;
        return std::max(avg_lo + p.lo_sq() * dt * gv, avg_hi + p.hi_sq() * dt * gv);
    }

    // F(y) = y - max_sigma E_sigma - dt f - dt n (y-L)^- + dt n (y-U)^+,
    // strictly increasing in y when dt is small enough.
    double residual(double ycand) const {
        double r = ycand - scenario_max(ycand) - dt * evaluate(spec->driver, EvalEnv{t, x, ycand, z});
        if (penalty > 0.0) {
            if (lower_v > -kInf) r -= dt * penalty * neg_part(ycand - lower_v);
            if (upper_v < kInf) r += dt * penalty * pos_part(ycand - upper_v);
        }
        return r;
    }
};

[[noreturn]] void root_failure(const NodeEquation& eq, int k, int j, double last) {
    throw SolverError(SolverError::Code::RootSolve,
                      "implicit step did not converge at step " + std::to_string(k) + ", offset " +
                          std::to_string(j) + " (t=" + format_csv_number(eq.t) +
                          ", x=" + format_csv_number(eq.x) +
                          ", residual=" + format_csv_number(last) + ")",
                      k, j);
}

/** Bracketing secant (Illinois) solve of the strictly increasing residual. */
double solve_node(const NodeEquation& eq, int k, int j) {
    double start = std::max(eq.avg_lo, eq.avg_hi);
    double fs = eq.residual(start);
    if (fs == 0.0) return start;

    // Walk away from the start in the downhill direction until the sign flips;
    // the residual has slope near 1, so |fs| is the natural first stride.
    double dir = fs > 0.0 ? -1.0 : 1.0;
    double stride = std::abs(fs) + 1e-16 * (1.0 + std::abs(start));
    double a = start, fa = fs, b = 0.0, fb = 0.0;
    bool bracketed = false;
    for (int round = 0; round < 240; ++round) {
        b = start + dir * stride;
        fb = eq.residual(b);
        if (fb == 0.0) return b;
        if ((fa > 0.0) != (fb > 0.0)) {
            bracketed = true;
            break;
        }
        a = b;
        fa = fb;
        stride *= 2.0;
    }
    if (!bracketed) root_failure(eq, k, j, fb);

    double c = b, fc = fb;
    for (int iter = 0; iter < 200; ++iter) {
        double denom = fb - fa;
        c = std::isfinite(denom) && denom != 0.0 ? (a * fb - b * fa) / denom : 0.5 * (a + b);
        double left = std::min(a, b), right = std::max(a, b);
        if (!(c > left) || !(c < right)) c = 0.5 * (a + b);
        fc = eq.residual(c);
        if (fc == 0.0 || std::abs(b - a) <= 1e-13 * (1.0 + std::abs(c))) return c;
        if ((fc > 0.0) == (fa > 0.0)) {
            a = c;
            fa = fc;
            fb *= 0.5;  // Illinois cut keeps the secant from stalling
        } else {
            b = c;
            fb = fc;
            fa *= 0.5;
        }
    }
    root_failure(eq, k, j, fc);
}

enum class RowMode { Penalized, Projected };

struct RowSpans {
    std::span<double> y, z, a_plus, a_minus, dk_lo, dk_hi, sigma_star;
};

void solve_row(const ProblemSpec& spec, const LatticeSpec& lat, int k,
               std::span<const double> next, double penalty, RowMode mode, RowSpans out) {
    const GParams& p = spec.params;
    const double dt = lat.dt();
    const double h = lat.h(p);
    const double t = lat.time_at(k);
    const double ratio = p.lo_sq() / p.hi_sq();
    const bool has_g = spec.driver_g.has_value();
    const bool has_lower = spec.lower.has_value();
    const bool has_upper = spec.upper.has_value();
    const std::size_t width = static_cast<std::size_t>(2 * k + 1);

    parallel_for(width, kRowGrain, [&](std::size_t idx) {
        const int j = static_cast<int>(idx) - k;
        const double v_minus = next[idx];
        const double v_mid = next[idx + 1];
        const double v_plus = next[idx + 2];
        const double d2 = v_plus - 2.0 * v_mid + v_minus;
        const double x = lat.x0 + j * h;

        NodeEquation eq;
        eq.spec = &spec;
        eq.t = t;
        eq.x = x;
        eq.z = (v_plus - v_minus) / (2.0 * h);
        eq.dt = dt;
        eq.avg_lo = v_mid + 0.5 * ratio * d2;
        eq.avg_hi = v_mid + 0.5 * d2;
        if (has_lower) eq.lower_v = evaluate(*spec.lower, EvalEnv{t, x, 0.0, 0.0});
        if (has_upper) eq.upper_v = evaluate(*spec.upper, EvalEnv{t, x, 0.0, 0.0});
        eq.penalty = mode == RowMode::Penalized ? penalty : 0.0;
        eq.has_g = has_g;

        double y = solve_node(eq, k, j);
        double y_store = y, a_plus = 0.0, a_minus = 0.0;
        if (mode == RowMode::Projected) {
            if (has_lower) a_plus = neg_part(y - eq.lower_v) / dt;
            if (has_upper) a_minus = pos_part(y - eq.upper_v) / dt;
            if (has_upper && y_store > eq.upper_v) y_store = eq.upper_v;
            if (has_lower && y_store < eq.lower_v) y_store = eq.lower_v;
        } else if (penalty > 0.0) {
            if (has_lower) a_plus = penalty * neg_part(y - eq.lower_v);
            if (has_upper) a_minus = penalty * pos_part(y - eq.upper_v);
        }

        double e_lo = eq.avg_lo, e_hi = eq.avg_hi;
        if (has_g) {
            double gv = evaluate(*spec.driver_g, EvalEnv{t, x, y, eq.z});
            e_lo += p.lo_sq() * dt * gv;
            e_hi += p.hi_sq() * dt * gv;
        }
        const double top = std::max(e_lo, e_hi);

        out.y[idx] = y_store;
        out.z[idx] = eq.z;
        out.a_plus[idx] = a_plus;
        out.a_minus[idx] = a_minus;
        out.dk_lo[idx] = e_lo - top;
        out.dk_hi[idx] = e_hi - top;
        out.sigma_star[idx] = e_hi >= e_lo ? p.hi_sq() : p.lo_sq();
    });
}

void check_step_budget(const ProblemSpec& spec, const LatticeSpec& lat) {
    double factor = 1.0 + (spec.driver_g ? spec.params.hi_sq() : 0.0);
    if (!(lat.dt() * spec.lipschitz * factor < 1.0))
        throw SolverError(SolverError::Code::LipschitzPrecondition,
                          "time step too coarse for the driver's Lipschitz bound: need dt*kappa"
                          " < 1 (dt=" + format_csv_number(lat.dt()) +
                              ", kappa=" + format_csv_number(spec.lipschitz * factor) + ")");
}

void fill_terminal(const ProblemSpec& spec, const LatticeSpec& lat, SolutionBundle& bundle) {
    const int n = lat.steps;
    const double h = lat.h(spec.params);
    const double t = lat.horizon;
    auto y = bundle.y.slice(n);
    parallel_for(y.size(), kRowGrain, [&](std::size_t idx) {
        const int j = static_cast<int>(idx) - n;
        const double x = lat.x0 + j * h;
        double v = evaluate(spec.terminal, EvalEnv{t, x, 0.0, 0.0});
        // terminal values are forced into the obstacle band
        if (spec.lower) v = std::max(v, evaluate(*spec.lower, EvalEnv{t, x, 0.0, 0.0}));
        if (spec.upper) v = std::min(v, evaluate(*spec.upper, EvalEnv{t, x, 0.0, 0.0}));
        y[idx] = v;
    });

    auto z = bundle.z.slice(n);
    const std::size_t last = y.size() - 1;
    for (std::size_t idx = 0; idx <= last; ++idx) {
        if (idx == 0)
            z[idx] = last == 0 ? 0.0 : (y[1] - y[0]) / h;
        else if (idx == last)
            z[idx] = (y[last] - y[last - 1]) / h;
        else
            z[idx] = (y[idx + 1] - y[idx - 1]) / (2.0 * h);
    }
    auto sigma = bundle.sigma_star.slice(n);
    std::fill(sigma.begin(), sigma.end(), spec.params.hi_sq());
}

SolutionBundle run_backward(const ProblemSpec& spec, const LatticeSpec& lat, double penalty,
                            RowMode mode) {
    spec.validate();
    lat.validate();
    check_step_budget(spec, lat);

    SolutionBundle bundle;
    bundle.lattice = lat;
    bundle.params = spec.params;
    bundle.penalty = mode == RowMode::Penalized ? penalty : 0.0;
    bundle.projected = mode == RowMode::Projected;
    bundle.has_lower = spec.lower.has_value();
    bundle.has_upper = spec.upper.has_value();

    const int n = lat.steps;
    bundle.y = NodeGrid(n);
    bundle.z = NodeGrid(n);
    bundle.a_plus = NodeGrid(n);
    bundle.a_minus = NodeGrid(n);
    bundle.dk_lo = NodeGrid(n);
    bundle.dk_hi = NodeGrid(n);
    bundle.sigma_star = NodeGrid(n);
    if (bundle.has_lower) bundle.lower = fill_grid(lat, spec.params, *spec.lower);
    if (bundle.has_upper) bundle.upper = fill_grid(lat, spec.params, *spec.upper);

    if (bundle.has_lower && bundle.has_upper) {
        for (int k = 0; k <= n; ++k) {
            for (int j = -k; j <= k; ++j) {
                if (bundle.lower.at(k, j) > bundle.upper.at(k, j))
                    throw SolverError(
                        SolverError::Code::ObstacleOrdering,
                        "lower obstacle exceeds upper obstacle at step " + std::to_string(k) +
                            ", offset " + std::to_string(j) +
                            " (t=" + format_csv_number(lat.time_at(k)) +
                            ", x=" + format_csv_number(lat.x0 + j * lat.h(spec.params)) +
                            ", L=" + format_csv_number(bundle.lower.at(k, j)) +
                            ", U=" + format_csv_number(bundle.upper.at(k, j)) + ")",
                        k, j);
            }
        }
    }

    fill_terminal(spec, lat, bundle);
    for (int k = n - 1; k >= 0; --k) {
        RowSpans out{bundle.y.slice(k),      bundle.z.slice(k),     bundle.a_plus.slice(k),
                     bundle.a_minus.slice(k), bundle.dk_lo.slice(k), bundle.dk_hi.slice(k),
                     bundle.sigma_star.slice(k)};
        solve_row(spec, lat, k, bundle.y.slice(k + 1), penalty, mode, out);
    }
    return bundle;
}

}  // namespace

void ProblemSpec::validate() const {
    try {
        params.validate();
    } catch (const std::invalid_argument& err) {
        throw SolverError(SolverError::Code::BadArgument, err.what());
    }
    require_vars(terminal, "x", "terminal");
    require_vars(driver, "txyz", "driver");
    if (driver_g) require_vars(*driver_g, "txyz", "volatility driver");
    if (lower) require_vars(*lower, "tx", "lower obstacle");
    if (upper) require_vars(*upper, "tx", "upper obstacle");
    if (!std::isfinite(lipschitz) || lipschitz < 0.0)
        throw SolverError(SolverError::Code::BadArgument,
                          "lipschitz bound must be finite and nonnegative");
}

StepRow backward_step(const ProblemSpec& spec, const LatticeSpec& lat, int k,
                      std::span<const double> next_slice, double penalty) {
    spec.validate();
    lat.validate();
    check_step_budget(spec, lat);
    if (k < 0 || k >= lat.steps)
        throw SolverError(SolverError::Code::BadArgument,
                          "step index must lie in [0, steps)", k, 0);
    if (next_slice.size() != static_cast<std::size_t>(2 * k + 3))
        throw SolverError(SolverError::Code::BadArgument,
                          "next slice must hold 2k+3 values", k, 0);
    if (!(penalty >= 0.0) || !std::isfinite(penalty))
        throw SolverError(SolverError::Code::BadArgument, "penalty must be finite and >= 0");

    StepRow row;
    const std::size_t width = static_cast<std::size_t>(2 * k + 1);
    row.y.resize(width);
    row.z.resize(width);
    row.a_plus.resize(width);
    row.a_minus.resize(width);
    row.dk_lo.resize(width);
    row.dk_hi.resize(width);
    row.sigma_star.resize(width);
    RowSpans out{row.y, row.z, row.a_plus, row.a_minus, row.dk_lo, row.dk_hi, row.sigma_star};
    solve_row(spec, lat, k, next_slice, penalty, RowMode::Penalized, out);
    return row;
}

SolutionBundle solve_penalized(const ProblemSpec& spec, const LatticeSpec& lat, double penalty) {
    if (!(penalty >= 0.0) || !std::isfinite(penalty))
        throw SolverError(SolverError::Code::BadArgument, "penalty must be finite and >= 0");
    return run_backward(spec, lat, penalty, RowMode::Penalized);
}

SolutionBundle solve_projected(const ProblemSpec& spec, const LatticeSpec& lat) {
    return run_backward(spec, lat, 0.0, RowMode::Projected);
}

LadderResult penalty_ladder(const ProblemSpec& spec, const LatticeSpec& lat,
                            const std::vector<double>& levels) {
    if (levels.empty())
        throw SolverError(SolverError::Code::BadArgument, "penalty ladder must not be empty");
    for (std::size_t i = 0; i < levels.size(); ++i) {
        if (!(levels[i] > 0.0) || !std::isfinite(levels[i]))
            throw SolverError(SolverError::Code::BadArgument,
                              "penalty levels must be finite and positive");
        if (i > 0 && !(levels[i] > levels[i - 1]))
            throw SolverError(SolverError::Code::BadArgument,
                              "penalty levels must be strictly increasing");
    }
    LadderResult result;
    result.levels = levels;
    result.bundles.reserve(levels.size());
    for (double level : levels) result.bundles.push_back(solve_penalized(spec, lat, level));
    result.projected = solve_projected(spec, lat);
    return result;
}

PathSeries extract_processes(const SolutionBundle& bundle, const std::vector<int>& moves,
                             const ScenarioPolicy& policy) {
    const LatticeSpec& lat = bundle.lattice;
    const int n = lat.steps;
    if (static_cast<int>(moves.size()) != n)
        throw SolverError(SolverError::Code::BadArgument,
                          "need exactly one move per time step");
    if (policy.kind == PolicyKind::Argmax && policy.sigma_star == nullptr)
        throw SolverError(SolverError::Code::BadArgument,
                          "argmax policy needs the bundle's sigma_star grid");

    const GParams& p = bundle.params;
    const double dt = lat.dt();
    const double h = lat.h(p);
    PathSeries series;
    series.t.reserve(n + 1);
    series.x.reserve(n + 1);
    series.y.reserve(n + 1);
    series.z.reserve(n + 1);
    series.a_plus_cum.reserve(n + 1);
    series.a_minus_cum.reserve(n + 1);
    series.k_cum.reserve(n + 1);

    int j = 0;
    double a_plus = 0.0, a_minus = 0.0, defect = 0.0;
    for (int k = 0; k <= n; ++k) {
        series.t.push_back(lat.time_at(k));
        series.x.push_back(lat.x0 + j * h);
        series.y.push_back(bundle.y.at(k, j));
        series.z.push_back(bundle.z.at(k, j));
        series.a_plus_cum.push_back(a_plus);
        series.a_minus_cum.push_back(a_minus);
        series.k_cum.push_back(defect);
        if (k == n) break;

        const int move = moves[k];
        if (move < -1 || move > 1)
            throw SolverError(SolverError::Code::BadArgument,
                              "path moves must be -1, 0 or +1", k, j);
        a_plus += bundle.a_plus.at(k, j) * dt;
        a_minus += bundle.a_minus.at(k, j) * dt;
        const double ssq = policy.sigma_sq_at(p, k, j);
        const bool pick_lo = !p.degenerate() && ssq == p.lo_sq();
        defect += pick_lo ? bundle.dk_lo.at(k, j) : bundle.dk_hi.at(k, j);
        j += move;
    }
    return series;
}

std::string PathSeries::to_csv() const {
    std::string out = "step,t,x,y,z,a_plus_cum,a_minus_cum,k_cum\n";
    for (std::size_t k = 0; k < t.size(); ++k) {
        out += std::to_string(k);
        out += ',';
        out += format_csv_number(t[k]);
        out += ',';
        out += format_csv_number(x[k]);
        out += ',';
        out += format_csv_number(y[k]);
        out += ',';
        out += format_csv_number(z[k]);
        out += ',';
        out += format_csv_number(a_plus_cum[k]);
        out += ',';
        out += format_csv_number(a_minus_cum[k]);
        out += ',';
        out += format_csv_number(k_cum[k]);
        out += '\n';
    }
    return out;
}

std::string bundle_to_csv(const SolutionBundle& bundle) {
    const LatticeSpec& lat = bundle.lattice;
    const double h = lat.h(bundle.params);
    std::string out = "step,offset,x,Y,Z,a_plus,a_minus,dK_lo,dK_hi,sigma_star_sq\n";
    for (int k = 0; k <= lat.steps; ++k) {
        for (int j = -k; j <= k; ++j) {
            out += std::to_string(k);
            out += ',';
            out += std::to_string(j);
            out += ',';
            out += format_csv_number(lat.x0 + j * h);
            out += ',';
            out += format_csv_number(bundle.y.at(k, j));
            out += ',';
            out += format_csv_number(bundle.z.at(k, j));
            out += ',';
            out += format_csv_number(bundle.a_plus.at(k, j));
            out += ',';
            out += format_csv_number(bundle.a_minus.at(k, j));
            out += ',';
            out += format_csv_number(bundle.dk_lo.at(k, j));
            out += ',';
            out += format_csv_number(bundle.dk_hi.at(k, j));
            out += ',';
            out += format_csv_number(bundle.sigma_star.at(k, j));
            out += '\n';
        }
    }
    return out;
}

}  // namespace grbsde
