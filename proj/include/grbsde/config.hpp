#ifndef GRBSDE_CONFIG_HPP
#define GRBSDE_CONFIG_HPP

#include <string>
#include <vector>

#include "grbsde/diagnostics.hpp"
#include "grbsde/solver.hpp"

namespace grbsde {

/** Configuration rejection; path points at the offending JSON location. */
class ConfigError : public std::runtime_error {
public:
    ConfigError(const std::string& message, std::string path = "")
        : std::runtime_error(message), path_(std::move(path)) {}

    const std::string& path() const { return path_; }

private:
    std::string path_;
};

/** A fully validated run described by one configuration file. */
struct RunConfig {
    ProblemSpec problem;
    LatticeSpec lattice;
    std::vector<double> levels;     // penalty ladder
    double solve_level = 0.0;       // penalty used by single solves
    bool projected_scheme = false;  // single solves use the projection scheme instead
    DiagnosticsConfig diagnostics;
    bool lipschitz_estimated = false;
    std::vector<std::string> warnings;
};

/**
 * Parses and validates a JSON configuration document. All expressions are
 * parsed eagerly; a missing "lipschitz" bound is estimated by sampled finite
 * differences of the drivers (recorded in warnings); a missing "steps" count
 * defaults to a value keeping dt well inside the implicit-step budget.
 * Throws ConfigError with a JSON-pointer-style path on any defect.
 */
RunConfig parse_config(const std::string& json_text, const std::string& origin);

/** Reads the file and forwards to parse_config. */
RunConfig load_config(const std::string& path);

/**
 * Heuristic Lipschitz bound of the drivers in (y, z): the largest sampled
 * finite-difference slope over a box of lattice-relevant states, widened by a
 * safety factor.
 */
double estimate_lipschitz(const ProblemSpec& problem, const LatticeSpec& lattice);

}  // namespace grbsde

#endif
