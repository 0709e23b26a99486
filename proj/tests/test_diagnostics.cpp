#include <cmath>
#include <vector>

#include "doctest.h"
#include "grbsde/diagnostics.hpp"
#include "grbsde/expr.hpp"
#include "grbsde/solver.hpp"

using namespace grbsde;

namespace {

ProblemSpec make_spec(double sigma_lo, double sigma_hi, const char* terminal, const char* driver,
                      const char* lower = nullptr, const char* upper = nullptr,
                      double lipschitz = 0.0) {
    ProblemSpec spec;
    spec.params = GParams{sigma_lo, sigma_hi};
    spec.terminal = parse_expression(terminal);
    spec.driver = parse_expression(driver);
    if (lower) spec.lower = parse_expression(lower);
    if (upper) spec.upper = parse_expression(upper);
    spec.lipschitz = lipschitz;
    return spec;
}

}  // namespace

TEST_CASE("rate fit recovers exact power laws") {
    std::vector<std::pair<double, double>> inverse;
    for (double n : {4.0, 8.0, 16.0, 32.0}) inverse.push_back({n, 1.0 / n});
    FitResult fit = rate_fit(inverse);
    CHECK(fit.slope == doctest::Approx(-1.0).epsilon(1e-12));
    CHECK(fit.r_squared == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(fit.points_used == 4);
    CHECK(fit.zeros_excluded == 0);

    std::vector<std::pair<double, double>> constant{{4, 0.7}, {8, 0.7}, {16, 0.7}};
    CHECK(rate_fit(constant).slope == doctest::Approx(0.0));

    std::vector<std::pair<double, double>> with_zeros{{4, 0.5}, {8, 0.25}, {16, 0.125}, {32, 0.0}};
    FitResult partial = rate_fit(with_zeros);
    CHECK(partial.points_used == 3);
    CHECK(partial.zeros_excluded == 1);
    CHECK(partial.slope == doctest::Approx(-1.0).epsilon(1e-12));

    std::vector<std::pair<double, double>> sparse{{4, 0.0}, {8, 0.0}, {16, 0.5}};
    CHECK_THROWS_AS(rate_fit(sparse), std::invalid_argument);
}

TEST_CASE("residuals and violations vanish without obstacle contact") {
    ProblemSpec spec = make_spec(0.5, 1.0, "x^2", "0");
    SolutionBundle bundle = solve_penalized(spec, LatticeSpec{1.0, 30, 0.0}, 64.0);
    auto [r_plus, r_minus] = asc_residuals(bundle);
    CHECK(r_plus == 0.0);
    CHECK(r_minus == 0.0);
    auto [sup_upper, sup_lower] = violation_norms(bundle);
    CHECK(sup_upper == 0.0);
    CHECK(sup_lower == 0.0);
}

TEST_CASE("solution pinched between equal obstacles sits on them exactly") {
    ProblemSpec spec = make_spec(0.6, 1.0, "x", "0", "0.5", "0.5");
    SolutionBundle bundle = solve_penalized(spec, LatticeSpec{1.0, 20, 0.0}, 32.0);
    CHECK(bundle.y0() == 0.5);
    auto [r_plus, r_minus] = asc_residuals(bundle);
    CHECK(r_plus == 0.0);
    CHECK(r_minus == 0.0);
}

TEST_CASE("cauchy gaps are zero for repeated levels") {
    ProblemSpec spec = make_spec(0.8, 1.2, "max(x, -0.5)", "0", "-1", "1");
    LatticeSpec lat{1.0, 25, 0.0};
    SolutionBundle bundle = solve_penalized(spec, lat, 32.0);
    std::vector<double> gaps = cauchy_report({bundle, bundle});
    REQUIRE(gaps.size() == 1);
    CHECK(gaps[0] == 0.0);
}

TEST_CASE("classical oracle reproduces trivial games") {
    // constant payoff strictly inside the band stays constant
    ProblemSpec inside = make_spec(1.0, 1.0, "0.25", "0", "-1", "1");
    NodeGrid v = dynkin_oracle(inside, LatticeSpec{1.0, 15, 0.0});
    for (int k = 0; k <= 15; ++k)
        for (int j = -k; j <= k; ++j) CHECK(v.at(k, j) == 0.25);

    // coinciding obstacles force the value onto them
    ProblemSpec pinched = make_spec(1.0, 1.0, "x", "0", "0.1 + 0.2*t", "0.1 + 0.2*t");
    NodeGrid w = dynkin_oracle(pinched, LatticeSpec{1.0, 15, 0.0});
    LatticeSpec lat{1.0, 15, 0.0};
    for (int k = 0; k <= 15; ++k)
        for (int j = -k; j <= k; ++j)
            CHECK(w.at(k, j) == doctest::Approx(0.1 + 0.2 * lat.time_at(k)).epsilon(1e-13));

    // the oracle only covers the degenerate band
    ProblemSpec uncertain = make_spec(0.5, 1.0, "x", "0", "-1", "1");
    CHECK_THROWS_AS(dynkin_oracle(uncertain, LatticeSpec{1.0, 15, 0.0}), std::invalid_argument);
}

TEST_CASE("comparison check accepts ordered data and certifies ordered values") {
    ProblemSpec base = make_spec(0.7, 1.1, "max(x, -0.5)", "-0.2*y", "-1.5", "1.5", 0.2);
    LatticeSpec lat{1.0, 40, 0.0};

    ComparisonResult same = comparison_check(base, base, 32.0, lat);
    CHECK(same.ok);
    CHECK(same.worst_violation == 0.0);
    CHECK(same.step == -1);

    // translation by +0.5 of terminal and both obstacles shifts the value by +0.5
    ProblemSpec shifted = make_spec(0.7, 1.1, "max(x, -0.5) + 0.5", "-0.2*(y - 0.5)",
                                    "-1.5 + 0.5", "1.5 + 0.5", 0.2);
    ComparisonResult ordered = comparison_check(base, shifted, 32.0, lat);
    CHECK(ordered.ok);
    CHECK(ordered.y0_second - ordered.y0_first == doctest::Approx(0.5).epsilon(1e-10));
}

TEST_CASE("comparison check rejects misordered data") {
    ProblemSpec high = make_spec(0.7, 1.1, "x + 1", "0", nullptr, nullptr, 0.0);
    ProblemSpec low = make_spec(0.7, 1.1, "x - 1", "0", nullptr, nullptr, 0.0);
    CHECK_THROWS_WITH_AS(comparison_check(high, low, 16.0, LatticeSpec{1.0, 20, 0.0}),
                         doctest::Contains("not ordered"), std::invalid_argument);

    ProblemSpec fast = make_spec(0.7, 1.1, "x", "1", nullptr, nullptr, 0.0);
    ProblemSpec slow = make_spec(0.7, 1.1, "x", "-1", nullptr, nullptr, 0.0);
    CHECK_THROWS_AS(comparison_check(fast, slow, 16.0, LatticeSpec{1.0, 20, 0.0}),
                    std::invalid_argument);
}

TEST_CASE("stability gap estimate is zero for identical data and stable in the gap size") {
    ProblemSpec base = make_spec(0.7, 1.1, "max(x, -0.5)", "-0.2*y", "-1.5", "1.5", 0.2);
    LatticeSpec lat{1.0, 40, 0.0};

    GapCheck same = apriori_gap_check(base, base, 32.0, lat, 2.0);
    CHECK(same.lhs == 0.0);
    CHECK(same.ratio == 0.0);

    // identical function, different expression tree: still exactly zero
    ProblemSpec rewritten = make_spec(0.7, 1.1, "max(-0.5, x)", "-0.2*y", "-1.5", "1.5", 0.2);
    CHECK(apriori_gap_check(base, rewritten, 32.0, lat, 2.0).lhs == 0.0);

    // constant driver offsets: the empirical constant stays put as the offset shrinks
    std::vector<double> ratios;
    for (double delta : {0.1, 0.05, 0.025}) {
        ProblemSpec bumped = base;
        bumped.driver = parse_expression("-0.2*y + " + std::to_string(delta));
        GapCheck gap = apriori_gap_check(base, bumped, 32.0, lat, 2.0);
        CHECK(gap.lhs > 0.0);
        CHECK(gap.rhs > 0.0);
        ratios.push_back(gap.ratio);
    }
    double hi = std::max({ratios[0], ratios[1], ratios[2]});
    double lo = std::min({ratios[0], ratios[1], ratios[2]});
    CHECK(hi / lo <= 2.0);

    // the estimate requires shared obstacles
    ProblemSpec other = make_spec(0.7, 1.1, "max(x, -0.5)", "-0.2*y", "-2", "1.5", 0.2);
    CHECK_THROWS_AS(apriori_gap_check(base, other, 32.0, lat, 2.0), std::invalid_argument);
}

TEST_CASE("martingale tripwire is silent on real bundles and loud on corrupted ones") {
    ProblemSpec spec = make_spec(0.6, 1.0, "abs(x) - 1", "-0.1*y", "-2", "2", 0.1);
    SolutionBundle bundle = solve_penalized(spec, LatticeSpec{1.0, 30, 0.0}, 16.0);
    auto [positive, tie] = g_martingale_check(bundle);
    CHECK(positive == 0.0);
    CHECK(tie == 0.0);

    SolutionBundle corrupted = bundle;
    corrupted.dk_hi.at(3, -1) = 2e-7;
    auto [bad_positive, bad_tie] = g_martingale_check(corrupted);
    CHECK(bad_positive == doctest::Approx(2e-7));
    CHECK(bad_tie >= 2e-7);

    // degenerate band: no volatility uncertainty, no slack anywhere
    ProblemSpec degenerate = make_spec(1.0, 1.0, "abs(x) - 1", "0", "-2", "2");
    SolutionBundle flat = solve_penalized(degenerate, LatticeSpec{1.0, 30, 0.0}, 16.0);
    CHECK(node_sup_abs(flat.dk_lo) == 0.0);
    CHECK(node_sup_abs(flat.dk_hi) == 0.0);
}

TEST_CASE("ladder report flags are coherent on an active double-obstacle problem") {
    ProblemSpec spec = make_spec(0.6, 1.0, "min(-19 - 0.02*x, -19.5 + 0.03*x)", "-0.1*y",
                                 "-1 - 0.1*t", "0.2*exp(-t) + 0.05*x", 0.1);
    LatticeSpec lat{200.0, 400, 0.0};
    LadderResult ladder = penalty_ladder(spec, lat, {8, 32, 128});
    DiagnosticsReport report = ladder_report(ladder, DiagnosticsConfig{});

    REQUIRE(report.rows.size() == 3);
    CHECK(report.upper_fit_ok);
    CHECK(report.upper_fit.slope < -0.5);
    CHECK(report.martingale_ok);
    for (const auto& row : report.rows) {
        CHECK(row.lower_violation == 0.0);  // repelling lower obstacle
        CHECK(row.upper_violation > 0.0);
        CHECK(row.exp_a_minus > 0.0);
        CHECK(row.exp_neg_k >= 0.0);
        CHECK(row.dist_projected >= 0.0);
    }
    CHECK(report.rows[2].upper_violation < report.rows[0].upper_violation);

    std::string csv = report.to_csv();
    CHECK(csv.rfind("level,y0,sup_abs_y,upper_violation,lower_violation,asc_plus,asc_minus,"
                    "exp_a_plus,exp_a_minus,exp_neg_k,exp_z_sq,dist_projected,cauchy_gap\n",
                    0) == 0);
    std::string json = report.to_json();
    CHECK(json.find("\"rate_in_band\"") != std::string::npos);
    CHECK(json.find("\"slope\"") != std::string::npos);
}
