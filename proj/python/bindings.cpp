#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <sstream>

#include "grbsde/config.hpp"
#include "grbsde/diagnostics.hpp"
#include "grbsde/expr.hpp"
#include "grbsde/lattice.hpp"
#include "grbsde/selftest.hpp"
#include "grbsde/solver.hpp"

namespace py = pybind11;

namespace {

grbsde::RunConfig config_from_json(const std::string& text) {
    return grbsde::parse_config(text, "<python>");
}

grbsde::SolutionBundle solve_config(const grbsde::RunConfig& config) {
    return config.projected_scheme
               ? grbsde::solve_projected(config.problem, config.lattice)
               : grbsde::solve_penalized(config.problem, config.lattice, config.solve_level);
}

py::dict summary_dict(const grbsde::RunConfig& config, const grbsde::SolutionBundle& bundle) {
    auto [defect_positive, defect_abs] = grbsde::g_martingale_check(bundle);
    auto [upper_violation, lower_violation] = grbsde::violation_norms(bundle);
    py::dict out;
    out["y0"] = bundle.y0();
    out["z0"] = bundle.z.at(0, 0);
    out["scheme"] = config.projected_scheme ? "projected" : "penalized";
    out["penalty"] = config.solve_level;
    out["steps"] = config.lattice.steps;
    out["horizon"] = config.lattice.horizon;
    out["martingale_defect"] = std::max(defect_positive, defect_abs);
    out["upper_violation"] = upper_violation;
    out["lower_violation"] = lower_violation;
    out["warnings"] = config.warnings;
    return out;
}

}  // namespace

PYBIND11_MODULE(grbsde, m) {
    m.doc() = "Doubly reflected backward SDE solver on an adversarial-volatility lattice";

    m.def(
        "g_value",
        [](double sigma_lo, double sigma_hi, double a) {
            return grbsde::g_value(grbsde::GParams{sigma_lo, sigma_hi}, a);
        },
        py::arg("sigma_lo"), py::arg("sigma_hi"), py::arg("a"),
        "Worst-case volatility driver: 0.5*(sigma_hi^2*max(a,0) - sigma_lo^2*max(-a,0)).");

    m.def(
        "eval_expression",
        [](const std::string& source, double t, double x, double y, double z) {
            return grbsde::evaluate(grbsde::parse_expression(source), grbsde::EvalEnv{t, x, y, z});
        },
        py::arg("source"), py::arg("t") = 0.0, py::arg("x") = 0.0, py::arg("y") = 0.0,
        py::arg("z") = 0.0, "Evaluates an expression of t, x, y, z.");

    m.def(
        "g_expectation",
        [](double sigma_lo, double sigma_hi, const std::string& terminal, double horizon,
           int steps, double x0) {
            return grbsde::g_expectation_value(grbsde::LatticeSpec{horizon, steps, x0},
                                               grbsde::GParams{sigma_lo, sigma_hi},
                                               grbsde::parse_expression(terminal));
        },
        py::arg("sigma_lo"), py::arg("sigma_hi"), py::arg("terminal"), py::arg("horizon"),
        py::arg("steps"), py::arg("x0") = 0.0,
        "Worst-case expectation of a terminal payoff over the volatility band.");

    m.def(
        "solve",
        [](const std::string& config_json) {
            grbsde::RunConfig config = config_from_json(config_json);
            return summary_dict(config, solve_config(config));
        },
        py::arg("config_json"),
        "Runs one backward solve from a JSON run configuration; returns the summary.");

    m.def(
        "solve_csv",
        [](const std::string& config_json) {
            grbsde::RunConfig config = config_from_json(config_json);
            return grbsde::bundle_to_csv(solve_config(config));
        },
        py::arg("config_json"), "Runs one backward solve; returns the node table as CSV text.");

    m.def(
        "ladder",
        [](const std::string& config_json) {
            grbsde::RunConfig config = config_from_json(config_json);
            grbsde::LadderResult ladder =
                grbsde::penalty_ladder(config.problem, config.lattice, config.levels);
            grbsde::DiagnosticsReport report = grbsde::ladder_report(ladder, config.diagnostics);
            py::dict out;
            out["csv"] = report.to_csv();
            out["json"] = report.to_json();
            out["slope"] = report.upper_fit_ok ? py::cast(report.upper_fit.slope) : py::none();
            out["projected_y0"] = report.projected_y0;
            out["rate_in_band"] = report.rate_in_band;
            return out;
        },
        py::arg("config_json"),
        "Solves the penalty ladder of a JSON run configuration; returns the report.");

    m.def(
        "selftest",
        [](bool corrupt_defects) {
            std::ostringstream text;
            int code = grbsde::run_selftest(text, corrupt_defects);
            return py::make_tuple(code, text.str());
        },
        py::arg("corrupt_defects") = false,
        "Runs the acceptance suite; returns (exit_code, report_text).");

    py::register_exception<grbsde::ConfigError>(m, "ConfigError", PyExc_ValueError);
    py::register_exception<grbsde::ExprError>(m, "ExpressionError", PyExc_ValueError);
    py::register_exception<grbsde::SolverError>(m, "SolverError", PyExc_RuntimeError);
}
