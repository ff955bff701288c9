#pragma once

#include <json.hpp>
#include <string>

#include "stackgame/core_model.hpp"
#include "stackgame/simulate.hpp"

namespace stackgame {

struct SolverConfig {
    int N = 6;
    double tol = 1e-10;
    int max_iter = 500;
    int continuation_steps = 0;  // 0: plain Picard
    double K_gain = 0.5;
    int riccati_grid = 2000;
    double delta_R = 1e-6;

    bool operator==(const SolverConfig&) const = default;
};

struct RunConfig {
    GameSpec spec;
    SolverConfig solver;
    SimConfig simulation;
    std::string strategy;  // riccati | lattice | aclm; empty picks a default

    bool operator==(const RunConfig&) const = default;
};

/// Throws MalformedSpec on missing keys, wrong types, or inconsistent shapes.
RunConfig parse_config(const nlohmann::json& doc);
/// Throws IoError when the file cannot be read and MalformedSpec on invalid JSON.
RunConfig load_config(const std::string& path);

nlohmann::json to_json(const RunConfig& cfg);
nlohmann::json to_json(const ConstraintSet& set);
ConstraintSet constraint_from_json(const nlohmann::json& j, int dim);

/// Canonical text: sorted keys, two-space indent, trailing newline.
std::string dump(const nlohmann::json& j);

}  // namespace stackgame
