#include <cmath>
#include <vector>

#include "doctest.h"
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

double sup_abs_diff(const NodeGrid& a, const NodeGrid& b) {
    double worst = 0.0;
    for (std::size_t i = 0; i < a.raw().size(); ++i)
        worst = std::max(worst, std::abs(a.raw()[i] - b.raw()[i]));
    return worst;
}

}  // namespace

TEST_CASE("single penalized step solves the implicit fixed point by hand") {
    // next slice constant 2, lower obstacle 3, dt = 1, penalty 1:
    // y = 2 + (3 - y) has the root 2.5 with density a+ = (y-L)^- = 0.5
    ProblemSpec spec = make_spec(1.0, 1.0, "0", "0", "3");
    LatticeSpec lat{1.0, 1, 0.0};
    std::vector<double> next{2.0, 2.0, 2.0};
    StepRow row = backward_step(spec, lat, 0, next, 1.0);
    CHECK(row.y[0] == doctest::Approx(2.5).epsilon(1e-13));
    CHECK(row.a_plus[0] == doctest::Approx(0.5).epsilon(1e-13));
    CHECK(row.a_minus[0] == 0.0);
    CHECK(row.z[0] == 0.0);
}

TEST_CASE("unreflected solve is exact on quadratic payoffs") {
    // dyadic lattice: every intermediate value is a machine number
    ProblemSpec spec = make_spec(0.5, 1.0, "x^2", "0");
    SolutionBundle bundle = solve_penalized(spec, LatticeSpec{1.0, 64, 0.0}, 0.0);
    CHECK(bundle.y0() == 1.0);

    ProblemSpec concave = make_spec(0.5, 1.0, "-(x^2)", "0");
    CHECK(solve_penalized(concave, LatticeSpec{1.0, 64, 0.0}, 0.0).y0() == -0.25);
}

TEST_CASE("driver with linear y term matches the exponential discount") {
    // f = -r*y, terminal 1: the implicit scheme realizes (1 + r*dt)^-N -> exp(-r T)
    ProblemSpec spec = make_spec(0.5, 1.0, "1", "-0.5*y", nullptr, nullptr, 0.5);
    double dt = 1.0 / 400;
    double y0 = solve_penalized(spec, LatticeSpec{1.0, 400, 0.0}, 0.0).y0();
    CHECK(y0 * std::pow(1 + 0.5 * dt, 400) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(y0 == doctest::Approx(std::exp(-0.5)).epsilon(1e-3));
}

TEST_CASE("volatility-weighted driver channel follows the worst scenario") {
    // y accumulates max_sigma(sigma^2 * g) per unit time
    ProblemSpec gain = make_spec(0.5, 1.0, "0", "0");
    gain.driver_g = parse_expression("1");
    CHECK(solve_penalized(gain, LatticeSpec{1.0, 80, 0.0}, 0.0).y0() ==
          doctest::Approx(1.0).epsilon(1e-12));

    ProblemSpec loss = make_spec(0.5, 1.0, "0", "0");
    loss.driver_g = parse_expression("-1");
    CHECK(solve_penalized(loss, LatticeSpec{1.0, 80, 0.0}, 0.0).y0() ==
          doctest::Approx(-0.25).epsilon(1e-12));
}

TEST_CASE("terminal slice is clamped into the obstacle band") {
    ProblemSpec spec = make_spec(1.0, 1.0, "2", "0", "3", "10");
    SolutionBundle bundle = solve_penalized(spec, LatticeSpec{1.0, 8, 0.0}, 16.0);
    for (int j = -8; j <= 8; ++j) CHECK(bundle.y.at(8, j) == 3.0);
    CHECK(bundle.y0() == doctest::Approx(3.0).epsilon(1e-12));
}

TEST_CASE("projected scheme stays inside the band with slack densities") {
    ProblemSpec spec = make_spec(0.8, 1.2, "max(x, -0.5)", "-0.3*y + 0.1*z", "-1", "1", 0.4);
    LatticeSpec lat{1.0, 40, 0.0};
    SolutionBundle bundle = solve_projected(spec, lat);
    CHECK(bundle.projected);
    for (int k = 0; k <= lat.steps; ++k) {
        for (int j = -k; j <= k; ++j) {
            CHECK(bundle.y.at(k, j) >= bundle.lower.at(k, j) - 1e-12);
            CHECK(bundle.y.at(k, j) <= bundle.upper.at(k, j) + 1e-12);
            CHECK(bundle.a_plus.at(k, j) >= 0.0);
            CHECK(bundle.a_minus.at(k, j) >= 0.0);
        }
    }
}

TEST_CASE("penalized solutions approach the projected reference monotonically") {
    ProblemSpec spec = make_spec(0.6, 1.0, "min(-19 - 0.02*x, -19.5 + 0.03*x)", "-0.1*y",
                                 "-1 - 0.1*t", "0.2*exp(-t) + 0.05*x", 0.1);
    LatticeSpec lat{200.0, 400, 0.0};
    LadderResult ladder = penalty_ladder(spec, lat, {4, 16, 64, 256});
    REQUIRE(ladder.bundles.size() == 4);
    std::vector<double> dist;
    for (const auto& bundle : ladder.bundles)
        dist.push_back(sup_abs_diff(bundle.y, ladder.projected.y));
    for (std::size_t i = 1; i < dist.size(); ++i) CHECK(dist[i] < dist[i - 1] + 1e-9);
    CHECK(dist.back() < dist.front());
}

TEST_CASE("martingale defect fields certify the scenario maximum") {
    ProblemSpec spec = make_spec(0.6, 1.0, "abs(x) - 1", "-0.1*y", "-2 - 0.1*t", "2 + 0.1*t", 0.1);
    SolutionBundle bundle = solve_penalized(spec, LatticeSpec{1.0, 50, 0.0}, 64.0);
    for (int k = 0; k <= 50; ++k) {
        for (int j = -k; j <= k; ++j) {
            double worst = std::max(bundle.dk_lo.at(k, j), bundle.dk_hi.at(k, j));
            CHECK(worst == 0.0);
            CHECK(bundle.dk_lo.at(k, j) <= 0.0);
            CHECK(bundle.dk_hi.at(k, j) <= 0.0);
            double sigma_sq = bundle.sigma_star.at(k, j);
            CHECK((sigma_sq == spec.params.lo_sq() || sigma_sq == spec.params.hi_sq()));
        }
    }
}

TEST_CASE("path extraction accumulates reflection and defect processes") {
    ProblemSpec spec = make_spec(0.6, 1.0, "abs(x) - 1", "-0.1*y", "-2", "2", 0.1);
    LatticeSpec lat{1.0, 30, 0.0};
    SolutionBundle bundle = solve_penalized(spec, lat, 32.0);

    std::vector<int> moves(30, 0);
    moves[3] = 1;
    moves[7] = -1;

    ScenarioPolicy argmax{PolicyKind::Argmax, &bundle.sigma_star};
    PathSeries along_argmax = extract_processes(bundle, moves, argmax);
    REQUIRE(along_argmax.t.size() == 31);
    for (double k : along_argmax.k_cum) CHECK(k == 0.0);  // the argmax scenario collects no slack

    ScenarioPolicy lo{PolicyKind::ConstantLo, nullptr};
    PathSeries along_lo = extract_processes(bundle, moves, lo);
    for (std::size_t i = 1; i < along_lo.k_cum.size(); ++i) {
        CHECK(along_lo.k_cum[i] <= along_lo.k_cum[i - 1] + 1e-15);  // K is nonincreasing
        CHECK(along_lo.a_plus_cum[i] >= along_lo.a_plus_cum[i - 1]);
        CHECK(along_lo.a_minus_cum[i] >= along_lo.a_minus_cum[i - 1]);
    }
    std::string csv = along_lo.to_csv();
    CHECK(csv.rfind("step,t,x,y,z,a_plus_cum,a_minus_cum,k_cum\n", 0) == 0);
}

TEST_CASE("solver rejects invalid inputs with typed errors") {
    // obstacles in the wrong order
    ProblemSpec crossed = make_spec(0.5, 1.0, "0", "0", "1", "-1");
    try {
        solve_penalized(crossed, LatticeSpec{1.0, 10, 0.0}, 8.0);
        FAIL("expected ObstacleOrdering");
    } catch (const SolverError& e) {
        CHECK(e.code() == SolverError::Code::ObstacleOrdering);
    }

    // explicit-step budget violated
    ProblemSpec stiff = make_spec(0.5, 1.0, "x", "-30*y", nullptr, nullptr, 30.0);
    try {
        solve_penalized(stiff, LatticeSpec{1.0, 10, 0.0}, 0.0);
        FAIL("expected LipschitzPrecondition");
    } catch (const SolverError& e) {
        CHECK(e.code() == SolverError::Code::LipschitzPrecondition);
    }

    // malformed band
    ProblemSpec inverted = make_spec(1.0, 0.5, "x", "0");
    CHECK_THROWS_AS(solve_penalized(inverted, LatticeSpec{1.0, 10, 0.0}, 0.0), SolverError);

    // terminal may only reference x
    ProblemSpec bad_vars = make_spec(0.5, 1.0, "x + y", "0");
    CHECK_THROWS_AS(bad_vars.validate(), SolverError);
}

TEST_CASE("bundle csv carries the documented columns") {
    ProblemSpec spec = make_spec(0.5, 1.0, "x^2", "0");
    SolutionBundle bundle = solve_penalized(spec, LatticeSpec{1.0, 3, 0.0}, 0.0);
    std::string csv = bundle_to_csv(bundle);
    CHECK(csv.rfind("step,offset,x,Y,Z,a_plus,a_minus,dK_lo,dK_hi,sigma_star_sq\n", 0) == 0);
    // one line per node plus the header
    std::size_t lines = 0;
    for (char c : csv)
        if (c == '\n') ++lines;
    CHECK(lines == 17);
}
