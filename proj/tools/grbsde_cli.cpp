#include <algorithm>
#include <filesystem>
#include <functional>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "grbsde/config.hpp"
#include "grbsde/csv.hpp"
#include "grbsde/diagnostics.hpp"
#include "grbsde/selftest.hpp"
#include "grbsde/solver.hpp"

namespace {

using nlohmann::ordered_json;

void emit_error(const char* code, const std::string& message, const std::string& path) {
    ordered_json doc;
    doc["error"]["code"] = code;
    doc["error"]["message"] = message;
    doc["error"]["path"] = path;
    std::cerr << doc.dump() << '\n';
}

void print_warnings(const grbsde::RunConfig& config) {
    for (const auto& warning : config.warnings) std::cerr << "warning: " << warning << '\n';
}

void write_output(const std::string& dir, const std::string& name, const std::string& content,
                  bool quiet) {
    std::filesystem::create_directories(dir);
    std::string path = dir + "/" + name;
    grbsde::write_text_file(path, content);
    if (!quiet) std::cout << "wrote " << path << '\n';
}

int cmd_solve(const grbsde::RunConfig& config, const std::string& out_dir, bool quiet) {
    grbsde::SolutionBundle bundle =
        config.projected_scheme
            ? grbsde::solve_projected(config.problem, config.lattice)
            : grbsde::solve_penalized(config.problem, config.lattice, config.solve_level);

    auto [defect_positive, defect_abs] = grbsde::g_martingale_check(bundle);
    auto [upper_violation, lower_violation] = grbsde::violation_norms(bundle);
    auto [residual_plus, residual_minus] = grbsde::asc_residuals(bundle);

    ordered_json summary;
    summary["y0"] = bundle.y0();
    summary["z0"] = bundle.z.at(0, 0);
    summary["scheme"] = config.projected_scheme ? "projected" : "penalized";
    if (!config.projected_scheme) summary["penalty"] = config.solve_level;
    summary["lattice"] = {{"horizon", config.lattice.horizon},
                          {"steps", config.lattice.steps},
                          {"x0", config.lattice.x0},
                          {"dt", config.lattice.dt()},
                          {"h", config.lattice.h(config.problem.params)}};
    summary["band"] = {{"sigma_lo", config.problem.params.sigma_lo},
                       {"sigma_hi", config.problem.params.sigma_hi}};
    summary["martingale_defect"] = std::max(defect_positive, defect_abs);
    summary["violations"] = {{"upper", upper_violation}, {"lower", lower_violation}};
    summary["skorohod_residuals"] = {{"plus", residual_plus}, {"minus", residual_minus}};
    if (!config.warnings.empty()) summary["warnings"] = config.warnings;

    write_output(out_dir, "solution.csv", grbsde::bundle_to_csv(bundle), quiet);
    write_output(out_dir, "summary.json", summary.dump(2) + "\n", quiet);
    return 0;
}

int cmd_ladder(const grbsde::RunConfig& config, const std::string& out_dir, bool quiet) {
    grbsde::LadderResult ladder =
        grbsde::penalty_ladder(config.problem, config.lattice, config.levels);
    grbsde::DiagnosticsReport report = grbsde::ladder_report(ladder, config.diagnostics);
    write_output(out_dir, "ladder.csv", report.to_csv(), quiet);
    write_output(out_dir, "diagnostics.json", report.to_json(), quiet);
    return 0;
}

int cmd_compare(const grbsde::RunConfig& first, const grbsde::RunConfig& second,
                const std::string& out_dir, bool quiet) {
    if (first.lattice.horizon != second.lattice.horizon ||
        first.lattice.steps != second.lattice.steps || first.lattice.x0 != second.lattice.x0)
        throw std::invalid_argument("compare requires identical lattices in both configs");
    if (first.solve_level != second.solve_level)
        throw std::invalid_argument("compare requires the same penalty level in both configs");

    grbsde::ComparisonResult result =
        grbsde::comparison_check(first.problem, second.problem, first.solve_level, first.lattice,
                                 first.diagnostics.comparison_tol);

    ordered_json doc;
    doc["ok"] = result.ok;
    doc["worst_violation"] = result.worst_violation;
    doc["penalty"] = first.solve_level;
    doc["tolerance"] = first.diagnostics.comparison_tol;
    doc["y0_first"] = result.y0_first;
    doc["y0_second"] = result.y0_second;
    if (result.step >= 0) doc["location"] = {{"step", result.step}, {"offset", result.offset}};
    try {
        grbsde::GapCheck gap =
            grbsde::apriori_gap_check(first.problem, second.problem, first.solve_level,
                                      first.lattice, first.diagnostics.alpha);
        doc["gap_estimate"] = {{"lhs", gap.lhs}, {"rhs", gap.rhs}, {"ratio", gap.ratio}};
    } catch (const std::invalid_argument&) {
        // the stability estimate needs shared obstacles; skip it otherwise
    }

    write_output(out_dir, "comparison.json", doc.dump(2) + "\n", quiet);
    return result.ok ? 0 : 3;
}

int cmd_oracle(const grbsde::RunConfig& config, const std::string& out_dir, bool quiet) {
    grbsde::NodeGrid values = grbsde::dynkin_oracle(config.problem, config.lattice);
    write_output(out_dir, "oracle.csv",
                 grbsde::grid_to_csv(config.lattice, config.problem.params, values), quiet);
    return 0;
}

int with_mapped_errors(const std::function<int()>& body) {
    try {
        return body();
    } catch (const grbsde::ConfigError& e) {
        emit_error("config", e.what(), e.path());
        return 1;
    } catch (const grbsde::SolverError& e) {
        std::string path;
        if (e.step() >= 0)
            path = "step " + std::to_string(e.step()) + ", offset " + std::to_string(e.node_offset());
        emit_error("numerical", e.what(), path);
        return 2;
    } catch (const grbsde::ExprError& e) {
        emit_error("numerical", e.what(), "offset " + std::to_string(e.offset()));
        return 2;
    } catch (const std::invalid_argument& e) {
        emit_error("config", e.what(), "");
        return 1;
    } catch (const std::exception& e) {
        emit_error("internal", e.what(), "");
        return 2;
    }
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Doubly reflected backward SDE solver under volatility uncertainty"};
    app.require_subcommand(1);

    std::string out_dir = ".";
    bool quiet = false;
    app.add_option("--out", out_dir, "output directory, created if missing")
        ->capture_default_str();
    app.add_flag("--quiet", quiet, "suppress progress output");

    std::string solve_config, ladder_config, oracle_config;
    std::vector<std::string> compare_configs;
    bool corrupt_defects = false;

    auto* solve = app.add_subcommand("solve", "run one backward solve; writes solution.csv and summary.json");
    solve->add_option("--config", solve_config, "run configuration (JSON)")->required();
    solve->fallthrough();

    auto* ladder = app.add_subcommand("ladder", "solve a penalty ladder; writes ladder.csv and diagnostics.json");
    ladder->add_option("--config", ladder_config, "run configuration (JSON)")->required();
    ladder->fallthrough();

    auto* compare = app.add_subcommand("compare", "check value ordering of two ordered problems; writes comparison.json");
    compare->add_option("--config", compare_configs, "two run configurations (JSON)")
        ->required()
        ->expected(2);
    compare->fallthrough();

    auto* oracle = app.add_subcommand("oracle", "classical reflected solve for a degenerate band; writes oracle.csv");
    oracle->add_option("--config", oracle_config, "run configuration (JSON)")->required();
    oracle->fallthrough();

    auto* selftest = app.add_subcommand("selftest", "run the built-in acceptance suite");
    selftest->add_flag("--corrupt-defects", corrupt_defects,
                       "inject a fake martingale defect (negative control)")
        ->group("");
    selftest->fallthrough();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) return app.exit(e);
        emit_error("config", e.what(), "");
        return 1;
    }

    if (selftest->parsed()) return grbsde::run_selftest(std::cout, corrupt_defects);

    return with_mapped_errors([&]() -> int {
        if (solve->parsed()) {
            grbsde::RunConfig config = grbsde::load_config(solve_config);
            print_warnings(config);
            return cmd_solve(config, out_dir, quiet);
        }
        if (ladder->parsed()) {
            grbsde::RunConfig config = grbsde::load_config(ladder_config);
            print_warnings(config);
            return cmd_ladder(config, out_dir, quiet);
        }
        if (compare->parsed()) {
            grbsde::RunConfig first = grbsde::load_config(compare_configs[0]);
            grbsde::RunConfig second = grbsde::load_config(compare_configs[1]);
            print_warnings(first);
            print_warnings(second);
            return cmd_compare(first, second, out_dir, quiet);
        }
        grbsde::RunConfig config = grbsde::load_config(oracle_config);
        print_warnings(config);
        return cmd_oracle(config, out_dir, quiet);
    });
}
