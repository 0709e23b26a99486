#include "grbsde/lattice.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "grbsde/csv.hpp"
#include "grbsde/parallel.hpp"

namespace grbsde {

namespace {

// plain sweeps are memory-bound; only very wide slices are worth threads
constexpr std::size_t kSweepGrain = 1 << 16;
// expression evaluation is much heavier per node
constexpr std::size_t kEvalGrain = 1 << 11;

}  // namespace

StepValue one_step_sup(const GParams& p, double dt, double h, double v_minus, double v_mid,
                       double v_plus) {
    const double lap = (v_plus - 2.0 * v_mid + v_minus) / (h * h);
    StepValue out;
    out.value = v_mid + dt * g_value(p, lap);
    out.sigma_sq = lap >= 0.0 ? p.hi_sq() : p.lo_sq();
    return out;
}

namespace {

// one backward sweep slice -> slice; the worst-case step needs no boundary
// handling because slice k+1 is one node wider on each side
void sweep_slice(const GParams& p, double dt, double h, std::span<const double> next,
                 std::span<double> out) {
    parallel_for(out.size(), kSweepGrain, [&](std::size_t i) {
        out[i] = one_step_sup(p, dt, h, next[i], next[i + 1], next[i + 2]).value;
    });
}

std::vector<double> terminal_values(const LatticeSpec& lat, const GParams& p,
                                    const ExprAst& terminal) {
    const double h = lat.h(p);
    std::vector<double> slice(static_cast<std::size_t>(2 * lat.steps + 1));
    parallel_for(slice.size(), kEvalGrain, [&](std::size_t i) {
        EvalEnv env;
        env.t = lat.horizon;
        env.x = lat.x0 + (static_cast<int>(i) - lat.steps) * h;
        slice[i] = evaluate(terminal, env);
    });
    return slice;
}

}  // namespace

NodeGrid conditional_g_expectation(const LatticeSpec& lat, const GParams& p,
                                   std::vector<double> terminal_slice) {
    lat.validate();
    p.validate();
    if (terminal_slice.size() != static_cast<std::size_t>(2 * lat.steps + 1))
        throw std::invalid_argument("terminal slice must have 2N+1 entries");
    NodeGrid grid(lat.steps);
    std::copy(terminal_slice.begin(), terminal_slice.end(), grid.slice(lat.steps).begin());
    const double dt = lat.dt();
    const double h = lat.h(p);
    for (int k = lat.steps - 1; k >= 0; --k)
        sweep_slice(p, dt, h, grid.slice(k + 1), grid.slice(k));
    return grid;
}

NodeGrid conditional_g_expectation(const LatticeSpec& lat, const GParams& p,
                                   const ExprAst& terminal) {
    lat.validate();
    p.validate();
    return conditional_g_expectation(lat, p, terminal_values(lat, p, terminal));
}

double g_expectation_value(const LatticeSpec& lat, const GParams& p, const ExprAst& terminal) {
    lat.validate();
    p.validate();
    std::vector<double> next = terminal_values(lat, p, terminal);
    std::vector<double> cur(next.size());
    const double dt = lat.dt();
    const double h = lat.h(p);
    for (int k = lat.steps - 1; k >= 0; --k) {
        std::span<double> out(cur.data(), static_cast<std::size_t>(2 * k + 1));
        sweep_slice(p, dt, h, {next.data(), static_cast<std::size_t>(2 * k + 3)}, out);
        cur.swap(next);
    }
    return next[0];
}

double expected_path_integral(const LatticeSpec& lat, const GParams& p, const NodeGrid& integrand) {
    lat.validate();
    p.validate();
    if (integrand.steps() != lat.steps)
        throw std::invalid_argument("integrand grid does not match the lattice");
    const int N = lat.steps;
    const double dt = lat.dt();
    const double h = lat.h(p);
    // trapezoidal time weights: sum_k c_k t_k equals T^2/2 exactly, so
    // classical Fubini-type integrands are reproduced exactly
    std::vector<double> next(static_cast<std::size_t>(2 * N + 1));
    {
        auto w = integrand.slice(N);
        for (std::size_t i = 0; i < next.size(); ++i) next[i] = 0.5 * dt * w[i];
    }
    std::vector<double> cur(next.size());
    for (int k = N - 1; k >= 0; --k) {
        const double ck = k == 0 ? 0.5 : 1.0;
        auto w = integrand.slice(k);
        std::span<double> out(cur.data(), static_cast<std::size_t>(2 * k + 1));
        std::span<const double> in(next.data(), static_cast<std::size_t>(2 * k + 3));
        parallel_for(out.size(), kSweepGrain, [&](std::size_t i) {
            out[i] = one_step_sup(p, dt, h, in[i], in[i + 1], in[i + 2]).value + ck * dt * w[i];
        });
        cur.swap(next);
    }
    return next[0];
}

double node_sup(const NodeGrid& grid) {
    double best = -std::numeric_limits<double>::infinity();
    for (double v : grid.raw()) best = std::max(best, v);
    return best;
}

double node_sup_abs(const NodeGrid& grid) {
    double best = 0.0;
    for (double v : grid.raw()) best = std::max(best, std::fabs(v));
    return best;
}

double expected_path_sum(const LatticeSpec& lat, const GParams& p, const ScenarioPolicy& policy,
                         const NodeGrid& increments) {
    lat.validate();
    p.validate();
    if (increments.steps() != lat.steps)
        throw std::invalid_argument("increment grid does not match the lattice");
    if (policy.kind == PolicyKind::Argmax &&
        (policy.sigma_star == nullptr || policy.sigma_star->steps() != lat.steps))
        throw std::invalid_argument("argmax policy needs a matching sigma* grid");
    const int N = lat.steps;
    const double denom = 2.0 * p.hi_sq();
    std::vector<double> next(static_cast<std::size_t>(2 * N + 1), 0.0);
    std::vector<double> cur(next.size());
    for (int k = N - 1; k >= 0; --k) {
        auto w = increments.slice(k);
        std::span<double> out(cur.data(), static_cast<std::size_t>(2 * k + 1));
        std::span<const double> in(next.data(), static_cast<std::size_t>(2 * k + 3));
        parallel_for(out.size(), kSweepGrain, [&](std::size_t i) {
            const int j = static_cast<int>(i) - k;
            const double q = policy.sigma_sq_at(p, k, j) / denom;  // prob of each +-h move
            out[i] = w[i] + q * in[i] + (1.0 - 2.0 * q) * in[i + 1] + q * in[i + 2];
        });
        cur.swap(next);
    }
    return next[0];
}

NodeGrid fill_grid(const LatticeSpec& lat, const GParams& p, const ExprAst& expr) {
    lat.validate();
    p.validate();
    NodeGrid grid(lat.steps);
    const double h = lat.h(p);
    for (int k = 0; k <= lat.steps; ++k) {
        auto row = grid.slice(k);
        const double t = lat.time_at(k);
        parallel_for(row.size(), kEvalGrain, [&](std::size_t i) {
            EvalEnv env;
            env.t = t;
            env.x = lat.x0 + (static_cast<int>(i) - k) * h;
            row[i] = evaluate(expr, env);
        });
    }
    return grid;
}

std::string grid_to_csv(const LatticeSpec& lat, const GParams& p, const NodeGrid& grid) {
    const double h = lat.h(p);
    std::string out = "step,offset,x,value\n";
    for (int k = 0; k <= grid.steps(); ++k) {
        auto row = grid.slice(k);
        for (int j = -k; j <= k; ++j) {
            out += std::to_string(k);
            out += ',';
            out += std::to_string(j);
            out += ',';
            out += format_csv_number(lat.x0 + j * h);
            out += ',';
            out += format_csv_number(row[j + k]);
            out += '\n';
        }
    }
    return out;
}

}  // namespace grbsde
