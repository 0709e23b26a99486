#include "grbsde/config.hpp"

#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"

#include "grbsde/csv.hpp"

namespace grbsde {

namespace {

using nlohmann::json;

std::string join_path(const std::string& base, const std::string& key) {
    return base + "/" + key;
}

const json& require_object(const json& doc, const std::string& path) {
    if (!doc.is_object()) throw ConfigError("expected an object", path);
    return doc;
}

void reject_unknown(const json& obj, const std::string& path,
                    const std::set<std::string>& allowed) {
    for (const auto& item : obj.items()) {
        if (!allowed.contains(item.key()))
            throw ConfigError("unknown field", join_path(path, item.key()));
    }
}

const json* find(const json& obj, const std::string& key) {
    auto it = obj.find(key);
    return it == obj.end() ? nullptr : &*it;
}

double get_number(const json& obj, const std::string& key, const std::string& path) {
    const json* v = find(obj, key);
    if (v == nullptr) throw ConfigError("missing field", join_path(path, key));
    if (!v->is_number()) throw ConfigError("expected a number", join_path(path, key));
    return v->get<double>();
}

double get_number_or(const json& obj, const std::string& key, const std::string& path,
                     double fallback) {
    const json* v = find(obj, key);
    if (v == nullptr) return fallback;
    if (!v->is_number()) throw ConfigError("expected a number", join_path(path, key));
    return v->get<double>();
}

std::string get_string(const json& obj, const std::string& key, const std::string& path) {
    const json* v = find(obj, key);
    if (v == nullptr) throw ConfigError("missing field", join_path(path, key));
    if (!v->is_string()) throw ConfigError("expected a string", join_path(path, key));
    return v->get<std::string>();
}

ExprAst parse_expr_field(const json& obj, const std::string& key, const std::string& path,
                         const std::string& allowed_vars, const char* role) {
    std::string source = get_string(obj, key, path);
    ExprAst ast;
    try {
        ast = parse_expression(source);
    } catch (const ExprError& err) {
        throw ConfigError(std::string("expression error: ") + err.what(), join_path(path, key));
    }
    for (char v : free_vars(ast)) {
        if (allowed_vars.find(v) == std::string::npos)
            throw ConfigError(std::string(role) + " may not use variable '" + std::string(1, v) +
                                  "' (allowed: " + allowed_vars + ")",
                              join_path(path, key));
    }
    return ast;
}

std::vector<double> default_levels() { return {4.0, 8.0, 16.0, 32.0, 64.0, 128.0, 256.0}; }

/** Scans the grid for lower > upper; used to reject misordered obstacles early. */
void check_obstacle_order(const ProblemSpec& problem, const LatticeSpec& lattice,
                          const std::string& path) {
    if (!problem.lower || !problem.upper) return;
    const double h = lattice.h(problem.params);
    for (int k = 0; k <= lattice.steps; ++k) {
        const double t = lattice.time_at(k);
        for (int j = -k; j <= k; ++j) {
            const double x = lattice.x0 + j * h;
            double lo, hi;
            try {
                lo = evaluate(*problem.lower, EvalEnv{t, x, 0.0, 0.0});
                hi = evaluate(*problem.upper, EvalEnv{t, x, 0.0, 0.0});
            } catch (const ExprError& err) {
                throw ConfigError(std::string("obstacle cannot be evaluated on the grid (t=") +
                                      format_csv_number(t) + ", x=" + format_csv_number(x) +
                                      "): " + err.what(),
                                  path);
            }
            if (lo > hi)
                throw ConfigError("lower obstacle exceeds upper obstacle at step " +
                                      std::to_string(k) + ", offset " + std::to_string(j) +
                                      " (t=" + format_csv_number(t) +
                                      ", x=" + format_csv_number(x) +
                                      ", L=" + format_csv_number(lo) +
                                      ", U=" + format_csv_number(hi) + ")",
                                  path);
        }
    }
}

}  // namespace

double estimate_lipschitz(const ProblemSpec& problem, const LatticeSpec& lattice) {
    const double spread = 3.0 * problem.params.sigma_hi * std::sqrt(lattice.horizon);
    const double states[] = {-2.0, -1.0, 0.0, 1.0, 2.0};
    const double delta = 1e-3;
    double worst = 0.0;

    auto probe = [&](const ExprAst& expr) {
        for (int ti = 0; ti <= 4; ++ti) {
            const double t = lattice.horizon * ti / 4.0;
            for (int xi = -2; xi <= 2; ++xi) {
                const double x = lattice.x0 + spread * xi / 2.0;
                for (double y : states) {
                    for (double z : states) {
                        try {
                            double fy1 = evaluate(expr, EvalEnv{t, x, y + delta, z});
                            double fy0 = evaluate(expr, EvalEnv{t, x, y - delta, z});
                            double fz1 = evaluate(expr, EvalEnv{t, x, y, z + delta});
                            double fz0 = evaluate(expr, EvalEnv{t, x, y, z - delta});
                            double slope = std::abs(fy1 - fy0) / (2.0 * delta) +
                                           std::abs(fz1 - fz0) / (2.0 * delta);
                            worst = std::max(worst, slope);
                        } catch (const ExprError&) {
                            // sample point outside the driver's domain; skip
                        }
                    }
                }
            }
        }
    };
    probe(problem.driver);
    if (problem.driver_g) probe(*problem.driver_g);
    return 1.5 * worst;
}

RunConfig parse_config(const std::string& json_text, const std::string& origin) {
    json doc;
    try {
        doc = json::parse(json_text);
    } catch (const json::parse_error& err) {
        throw ConfigError(origin + ": not valid JSON: " + err.what());
    }
    require_object(doc, "");
    reject_unknown(doc, "", {"problem", "lattice", "penalty", "diagnostics"});

    RunConfig config;

    const json* problem = find(doc, "problem");
    if (problem == nullptr) throw ConfigError("missing field", "/problem");
    require_object(*problem, "/problem");
    reject_unknown(*problem, "/problem",
                   {"sigma_lo", "sigma_hi", "terminal", "driver", "driver_g", "lower", "upper",
                    "lipschitz"});
    config.problem.params.sigma_lo = get_number(*problem, "sigma_lo", "/problem");
    config.problem.params.sigma_hi = get_number(*problem, "sigma_hi", "/problem");
    try {
        config.problem.params.validate();
    } catch (const std::invalid_argument& err) {
        throw ConfigError(err.what(), "/problem/sigma_lo");
    }
    config.problem.terminal = parse_expr_field(*problem, "terminal", "/problem", "x", "terminal");
    config.problem.driver = parse_expr_field(*problem, "driver", "/problem", "txyz", "driver");
    if (find(*problem, "driver_g") != nullptr)
        config.problem.driver_g =
            parse_expr_field(*problem, "driver_g", "/problem", "txyz", "volatility driver");
    if (find(*problem, "lower") != nullptr)
        config.problem.lower = parse_expr_field(*problem, "lower", "/problem", "tx", "lower obstacle");
    if (find(*problem, "upper") != nullptr)
        config.problem.upper = parse_expr_field(*problem, "upper", "/problem", "tx", "upper obstacle");

    const json* lattice = find(doc, "lattice");
    if (lattice == nullptr) throw ConfigError("missing field", "/lattice");
    require_object(*lattice, "/lattice");
    reject_unknown(*lattice, "/lattice", {"horizon", "steps", "x0"});
    config.lattice.horizon = get_number(*lattice, "horizon", "/lattice");
    if (!(config.lattice.horizon > 0.0) || !std::isfinite(config.lattice.horizon))
        throw ConfigError("horizon must be positive and finite", "/lattice/horizon");
    config.lattice.x0 = get_number_or(*lattice, "x0", "/lattice", 0.0);
    if (!std::isfinite(config.lattice.x0)) throw ConfigError("x0 must be finite", "/lattice/x0");

    const json* lipschitz = find(*problem, "lipschitz");
    if (lipschitz != nullptr) {
        if (!lipschitz->is_number()) throw ConfigError("expected a number", "/problem/lipschitz");
        config.problem.lipschitz = lipschitz->get<double>();
        if (!(config.problem.lipschitz >= 0.0) || !std::isfinite(config.problem.lipschitz))
            throw ConfigError("lipschitz bound must be finite and nonnegative", "/problem/lipschitz");
    } else {
        config.problem.lipschitz = estimate_lipschitz(config.problem, config.lattice);
        config.lipschitz_estimated = true;
        config.warnings.push_back(
            "lipschitz bound not given; estimated " + format_csv_number(config.problem.lipschitz) +
            " from sampled finite differences of the drivers");
    }

    const double kappa_eff = config.problem.lipschitz *
                             (1.0 + (config.problem.driver_g ? config.problem.params.hi_sq() : 0.0));
    const json* steps = find(*lattice, "steps");
    if (steps != nullptr) {
        if (!steps->is_number_integer()) throw ConfigError("expected an integer", "/lattice/steps");
        long long parsed = steps->get<long long>();
        if (parsed < 1 || parsed > 2000000) throw ConfigError("steps must lie in [1, 2e6]", "/lattice/steps");
        config.lattice.steps = static_cast<int>(parsed);
        if (!(config.lattice.dt() * kappa_eff < 1.0))
            throw ConfigError("steps too small for the driver's Lipschitz bound: need dt*kappa < 1",
                              "/lattice/steps");
    } else {
        // default: dt*kappa <= 0.1 with a sane minimum resolution
        double needed = 10.0 * kappa_eff * config.lattice.horizon;
        config.lattice.steps = std::max(50, static_cast<int>(std::ceil(needed)));
    }

    config.levels = default_levels();
    const json* penalty = find(doc, "penalty");
    if (penalty != nullptr) {
        require_object(*penalty, "/penalty");
        reject_unknown(*penalty, "/penalty", {"levels", "level", "scheme"});
        const json* levels = find(*penalty, "levels");
        if (levels != nullptr) {
            if (!levels->is_array() || levels->empty())
                throw ConfigError("expected a non-empty array", "/penalty/levels");
            config.levels.clear();
            for (std::size_t i = 0; i < levels->size(); ++i) {
                const json& entry = (*levels)[i];
                std::string path = "/penalty/levels/" + std::to_string(i);
                if (!entry.is_number()) throw ConfigError("expected a number", path);
                double value = entry.get<double>();
                if (!(value > 0.0) || !std::isfinite(value))
                    throw ConfigError("penalty levels must be finite and positive", path);
                if (!config.levels.empty() && !(value > config.levels.back()))
                    throw ConfigError("penalty levels must be strictly increasing", path);
                config.levels.push_back(value);
            }
        }
        config.solve_level = get_number_or(*penalty, "level", "/penalty", config.levels.back());
        if (!(config.solve_level >= 0.0) || !std::isfinite(config.solve_level))
            throw ConfigError("penalty level must be finite and nonnegative", "/penalty/level");
        const json* scheme = find(*penalty, "scheme");
        if (scheme != nullptr) {
            if (!scheme->is_string()) throw ConfigError("expected a string", "/penalty/scheme");
            std::string name = scheme->get<std::string>();
            if (name == "projected")
                config.projected_scheme = true;
            else if (name != "penalized")
                throw ConfigError("scheme must be \"penalized\" or \"projected\"", "/penalty/scheme");
        }
    } else {
        config.solve_level = config.levels.back();
    }

    const json* diagnostics = find(doc, "diagnostics");
    if (diagnostics != nullptr) {
        require_object(*diagnostics, "/diagnostics");
        reject_unknown(*diagnostics, "/diagnostics",
                       {"alpha", "rate_window", "uniform_floor", "slope_lo", "slope_hi", "r2_min",
                        "decade_factor", "ratio_max", "comparison_tol", "martingale_tol"});
        DiagnosticsConfig& d = config.diagnostics;
        d.alpha = get_number_or(*diagnostics, "alpha", "/diagnostics", d.alpha);
        const json* window = find(*diagnostics, "rate_window");
        if (window != nullptr) {
            if (!window->is_array() || window->size() != 2 || !(*window)[0].is_number() ||
                !(*window)[1].is_number())
                throw ConfigError("expected an array of two numbers", "/diagnostics/rate_window");
            d.rate_window_lo = (*window)[0].get<double>();
            d.rate_window_hi = (*window)[1].get<double>();
        }
        d.uniform_floor = get_number_or(*diagnostics, "uniform_floor", "/diagnostics", d.uniform_floor);
        d.slope_lo = get_number_or(*diagnostics, "slope_lo", "/diagnostics", d.slope_lo);
        d.slope_hi = get_number_or(*diagnostics, "slope_hi", "/diagnostics", d.slope_hi);
        d.r2_min = get_number_or(*diagnostics, "r2_min", "/diagnostics", d.r2_min);
        d.decade_factor = get_number_or(*diagnostics, "decade_factor", "/diagnostics", d.decade_factor);
        d.ratio_max = get_number_or(*diagnostics, "ratio_max", "/diagnostics", d.ratio_max);
        d.comparison_tol =
            get_number_or(*diagnostics, "comparison_tol", "/diagnostics", d.comparison_tol);
        d.martingale_tol =
            get_number_or(*diagnostics, "martingale_tol", "/diagnostics", d.martingale_tol);
        try {
            d.validate();
        } catch (const std::invalid_argument& err) {
            throw ConfigError(err.what(), "/diagnostics");
        }
    }

    try {
        config.problem.validate();
        config.lattice.validate();
    } catch (const std::exception& err) {
        throw ConfigError(err.what(), "/problem");
    }
    check_obstacle_order(config.problem, config.lattice, "/problem");
    return config;
}

RunConfig load_config(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot open configuration file: " + path);
    std::ostringstream buffer;
    buffer << in.rdbuf();
    return parse_config(buffer.str(), path);
}

}  // namespace grbsde
