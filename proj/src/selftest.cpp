#include "grbsde/selftest.hpp"

#include <algorithm>
#include <cmath>
#include <cstdarg>
#include <cstdio>
#include <optional>
#include <ostream>
#include <random>
#include <string>
#include <vector>

#include "grbsde/diagnostics.hpp"
#include "grbsde/expr.hpp"
#include "grbsde/parallel.hpp"
#include "grbsde/solver.hpp"

namespace grbsde {

namespace {

std::string fmt(const char* pattern, ...) {
    char buf[512];
    va_list args;
    va_start(args, pattern);
    std::vsnprintf(buf, sizeof buf, pattern, args);
    va_end(args);
    return buf;
}

ProblemSpec make_spec(double sigma_lo, double sigma_hi, const std::string& terminal,
                      const std::string& driver, const char* lower, const char* upper,
                      double lipschitz) {
    ProblemSpec spec;
    spec.params = GParams{sigma_lo, sigma_hi};
    spec.terminal = parse_expression(terminal);
    spec.driver = parse_expression(driver);
    if (lower) spec.lower = parse_expression(lower);
    if (upper) spec.upper = parse_expression(upper);
    spec.lipschitz = lipschitz;
    return spec;
}

/** The pinned rate benchmark: long horizon so the upper obstacle carries
    sustained contact; the lower obstacle is strictly repelling for this data
    and stays inactive at every penalty level. */
ProblemSpec benchmark_spec() {
    return make_spec(0.6, 1.0, "min(-19 - 0.02*x, -19.5 + 0.03*x)", "-0.1*y",
                     "-1 - 0.1*t", "0.2*exp(-t) + 0.05*x", 0.1);
}

LatticeSpec benchmark_lattice() { return LatticeSpec{200.0, 400, 0.0}; }

const std::vector<double>& benchmark_levels() {
    static const std::vector<double> levels{4, 8, 16, 32, 64, 128, 256};
    return levels;
}

double sup_abs_diff(const NodeGrid& a, const NodeGrid& b) {
    double worst = 0.0;
    for (std::size_t i = 0; i < a.raw().size(); ++i)
        worst = std::max(worst, std::abs(a.raw()[i] - b.raw()[i]));
    return worst;
}

std::vector<double> column(const std::vector<LadderRow>& rows, double LadderRow::*member) {
    std::vector<double> values;
    values.reserve(rows.size());
    for (const auto& row : rows) values.push_back(row.*member);
    return values;
}

std::string ratio_text(const std::vector<double>& values, double floor_value) {
    double hi = *std::max_element(values.begin(), values.end());
    double lo = *std::min_element(values.begin(), values.end());
    if (hi <= floor_value) return "inactive";
    return fmt("%.3f", hi / lo);
}

}  // namespace

int run_selftest(std::ostream& out, bool corrupt_defects) {
    int passed = 0;
    auto report_line = [&](int number, const char* name, bool pass, const std::string& detail) {
        out << (pass ? "[PASS] " : "[FAIL] ") << number << ' ' << name << ": " << detail << '\n';
        if (pass) ++passed;
    };

    double max_defect = 0.0;
    int tracked_bundles = 0;
    auto track = [&](const SolutionBundle& bundle) {
        auto [positive, tie] = g_martingale_check(bundle);
        max_defect = std::max({max_defect, positive, tie});
        ++tracked_bundles;
    };

    // 1: the scheme is exact on quadratics at every lattice size.
    {
        bool pass = false;
        std::string detail;
        try {
            struct Case {
                const char* source;
                double exact;
            };
            double worst = 0.0;
            for (const Case& c : {Case{"x^2", 1.0}, Case{"-(x^2)", -0.25}}) {
                ProblemSpec spec = make_spec(0.5, 1.0, c.source, "0", nullptr, nullptr, 0.0);
                for (int steps : {1, 7, 200}) {
                    SolutionBundle bundle = solve_penalized(spec, LatticeSpec{1.0, steps, 0.0}, 0.0);
                    worst = std::max(worst, std::abs(bundle.y0() - c.exact));
                    track(bundle);
                }
            }
            pass = worst <= 1e-12;
            detail = fmt("max|Y0 - exact| = %.3e over N in {1,7,200} (tol 1e-12)", worst);
        } catch (const std::exception& e) {
            detail = std::string("exception: ") + e.what();
        }
        report_line(1, "quadratic-exactness", pass, detail);
    }

    // 2: degenerate band reduces to the classical doubly reflected value.
    std::optional<SolutionBundle> classical_penalized;
    {
        bool pass = false;
        std::string detail;
        try {
            ProblemSpec spec = make_spec(1.0, 1.0, "max(x,-1)", "0", "-1", "1", 0.0);
            LatticeSpec lat{1.0, 200, 0.0};
            SolutionBundle penalized = solve_penalized(spec, lat, 256.0);
            SolutionBundle projected = solve_projected(spec, lat);
            NodeGrid oracle = dynkin_oracle(spec, lat);
            track(penalized);
            track(projected);
            double gap_penalized = sup_abs_diff(penalized.y, oracle);
            double gap_projected = sup_abs_diff(projected.y, oracle);
            classical_penalized = std::move(penalized);
            pass = gap_penalized <= 5e-3 && gap_projected <= 1e-12;
            detail = fmt("penalized vs oracle %.3e (tol 5e-3), projected vs oracle %.3e (tol 1e-12)",
                         gap_penalized, gap_projected);
        } catch (const std::exception& e) {
            detail = std::string("exception: ") + e.what();
        }
        report_line(2, "classical-reduction", pass, detail);
    }

    // Ladder A runs single-worker; it feeds checks 3-6 and one side of the
    // determinism comparison in check 9.
    std::optional<DiagnosticsReport> report;
    std::string serial_csv;
    std::string ladder_error;
    DiagnosticsConfig config;
    try {
        set_worker_override(1);
        LadderResult ladder = penalty_ladder(benchmark_spec(), benchmark_lattice(), benchmark_levels());
        report = ladder_report(ladder, config);
        serial_csv = report->to_csv();
        for (const auto& bundle : ladder.bundles) track(bundle);
        track(ladder.projected);
    } catch (const std::exception& e) {
        ladder_error = std::string("exception: ") + e.what();
    }
    set_worker_override(0);

    // 3: penalization rate of the upper-violation norm.
    {
        bool pass = false;
        std::string detail = ladder_error;
        if (report) {
            pass = report->rate_in_band;
            detail = fmt("slope %.4f in [%.2f,%.2f], r^2 %.5f >= %.2f", report->upper_fit.slope,
                         config.slope_lo, config.slope_hi, report->upper_fit.r_squared, config.r2_min);
        }
        report_line(3, "penalization-rate", pass, detail);
    }

    // 4: Skorohod residuals shrink by a decade across the ladder. The lower
    // residual column is identically zero for this data (the lower obstacle
    // is strictly repelling), which the decay check accepts as 0 <= 0/10.
    {
        bool pass = false;
        std::string detail = ladder_error;
        if (report) {
            pass = report->asc_plus_decaying && report->asc_minus_decaying;
            const auto& rows = report->rows;
            detail = fmt("r+ %.3e -> %.3e, r- %.3e -> %.3e (each <= first/%.0f)",
                         rows.front().asc_plus, rows.back().asc_plus, rows.front().asc_minus,
                         rows.back().asc_minus, config.decade_factor);
        }
        report_line(4, "skorohod-residual-decay", pass, detail);
    }

    // 5: successive ladder gaps contract.
    {
        bool pass = false;
        std::string detail = ladder_error;
        if (report) {
            pass = report->cauchy_decaying;
            const auto& gaps = report->cauchy_gaps;
            detail = fmt("%zu gaps strictly decreasing, %.3e -> %.3e (final <= first/%.0f)",
                         gaps.size(), gaps.empty() ? 0.0 : gaps.front(),
                         gaps.empty() ? 0.0 : gaps.back(), config.decade_factor);
        }
        report_line(5, "cauchy-gaps", pass, detail);
    }

    // 6: uniform bounds across penalty levels.
    {
        bool pass = false;
        std::string detail = ladder_error;
        if (report) {
            pass = report->uniform_ratios_ok;
            const auto& rows = report->rows;
            detail = fmt("max/min ratios sup|Y| %s, E[A+] %s, E[A-] %s, E[Z^2] %s (max %.1f)",
                         ratio_text(column(rows, &LadderRow::sup_abs_y), config.uniform_floor).c_str(),
                         ratio_text(column(rows, &LadderRow::exp_a_plus), config.uniform_floor).c_str(),
                         ratio_text(column(rows, &LadderRow::exp_a_minus), config.uniform_floor).c_str(),
                         ratio_text(column(rows, &LadderRow::exp_z_sq), config.uniform_floor).c_str(),
                         config.ratio_max);
        }
        report_line(6, "uniform-bounds", pass, detail);
    }

    // 7: randomized comparison sweep; ordered data must give ordered values.
    {
        bool pass = false;
        std::string detail;
        try {
            std::mt19937_64 rng(0x9e3779b97f4a7c15ULL);
            std::uniform_real_distribution<double> u01(0.0, 1.0);
            LatticeSpec lat{1.0, 60, 0.0};
            int violations = 0;
            double worst = 0.0;
            for (int i = 0; i < 100; ++i) {
                double a0 = 0.4 * u01(rng), a1 = 0.4 * u01(rng);
                double c0 = 0.08 * u01(rng), c1 = 0.08 * u01(rng);
                double d0 = 0.3 * u01(rng), d1 = 0.3 * u01(rng);
                double e0 = 0.05 * u01(rng), e1 = 0.05 * u01(rng);
                std::string xi1 = fmt("max(x,-0.5) - (%.6f + %.6f*x^2)", a0, c0);
                std::string xi2 = fmt("max(x,-0.5) + (%.6f + %.6f*x^2)", a1, c1);
                std::string f1 = fmt("-0.2*y + 0.05*z - (%.6f + %.6f*t)", d0, e0);
                std::string f2 = fmt("-0.2*y + 0.05*z + (%.6f + %.6f*t)", d1, e1);
                std::string lo1 = "-1.5 - 0.1*t", lo2 = lo1, up1 = "1.5 + 0.05*t", up2 = up1;
                if (i % 3 == 0) {
                    lo1 = fmt("-1.5 - 0.1*t - %.6f", 0.2 * u01(rng));
                    lo2 = fmt("-1.5 - 0.1*t + %.6f", 0.2 * u01(rng));
                    up1 = fmt("1.5 + 0.05*t - %.6f", 0.2 * u01(rng));
                    up2 = fmt("1.5 + 0.05*t + %.6f", 0.2 * u01(rng));
                }
                ProblemSpec s1 = make_spec(0.7, 1.1, xi1, f1, lo1.c_str(), up1.c_str(), 0.25);
                ProblemSpec s2 = make_spec(0.7, 1.1, xi2, f2, lo2.c_str(), up2.c_str(), 0.25);
                ComparisonResult result = comparison_check(s1, s2, 32.0, lat, config.comparison_tol);
                if (!result.ok) {
                    ++violations;
                    worst = std::max(worst, result.worst_violation);
                }
                if (i % 10 == 0) {
                    track(solve_penalized(s1, lat, 32.0));
                    track(solve_penalized(s2, lat, 32.0));
                }
            }
            pass = violations == 0;
            detail = fmt("100 ordered pairs, %d violations, worst excess %.3e (tol %.0e)", violations,
                         worst, config.comparison_tol);
        } catch (const std::exception& e) {
            detail = std::string("exception: ") + e.what();
        }
        report_line(7, "comparison-sweep", pass, detail);
    }

    // 8: martingale-defect tripwire over every bundle the suite produced.
    {
        bool pass = max_defect <= config.martingale_tol;
        std::string detail = fmt("max defect %.3e over %d bundles (tol %.0e)", max_defect,
                                 tracked_bundles, config.martingale_tol);
        if (corrupt_defects && classical_penalized) {
            SolutionBundle corrupted = *classical_penalized;
            corrupted.dk_lo.at(0, 0) = 1e-6;
            auto [positive, tie] = g_martingale_check(corrupted);
            pass = pass && positive <= config.martingale_tol && tie <= config.martingale_tol;
            detail += fmt("; injected defect reported as %.3e", std::max(positive, tie));
        }
        report_line(8, "martingale-defects", pass, detail);
    }

    // 9: rerun the ladder at full parallelism; reports must match byte for byte.
    {
        bool pass = false;
        std::string detail = ladder_error;
        if (report) {
            try {
                // At least 4 workers so the threaded path runs even on one core.
                int parallel_workers = std::max(4, worker_count());
                set_worker_override(parallel_workers);
                LadderResult ladder =
                    penalty_ladder(benchmark_spec(), benchmark_lattice(), benchmark_levels());
                std::string parallel_csv = ladder_report(ladder, config).to_csv();
                set_worker_override(0);
                pass = parallel_csv == serial_csv;
                if (pass) {
                    detail = fmt("ladder CSV byte-identical for 1 vs %d workers (%zu bytes)",
                                 parallel_workers, serial_csv.size());
                } else {
                    std::size_t limit = std::min(serial_csv.size(), parallel_csv.size());
                    std::size_t index = 0;
                    while (index < limit && serial_csv[index] == parallel_csv[index]) ++index;
                    detail = fmt("ladder CSV differs at byte %zu (sizes %zu vs %zu)", index,
                                 serial_csv.size(), parallel_csv.size());
                }
            } catch (const std::exception& e) {
                set_worker_override(0);
                detail = std::string("exception: ") + e.what();
            }
        }
        report_line(9, "determinism", pass, detail);
    }

    out << "selftest: " << passed << "/9 checks passed\n";
    return passed == 9 ? 0 : 3;
}

}  // namespace grbsde
