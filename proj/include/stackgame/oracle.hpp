#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "stackgame/core_model.hpp"
#include "stackgame/lattice.hpp"

namespace stackgame {

/// Flattened node controls, lexicographic (layer, index), layers 0..N-1.
Eigen::VectorXd flatten_controls(const NodeProcess& proc, const Lattice& lattice);
NodeProcess unflatten_controls(const Eigen::VectorXd& flat, const Lattice& lattice, int dim);

struct OracleObjective {
    double value = 0.0;
    Eigen::VectorXd gradient;  // gradient in the flattened controls
};

/// Discrete follower cost J2 and its exact reverse-mode gradient in v.
OracleObjective follower_objective(const GameSpec& spec, const Lattice& lattice, const Eigen::VectorXd& u,
                                   const Eigen::VectorXd& v);
/// Discrete leader cost J1 for given controls.
double leader_cost(const GameSpec& spec, const Lattice& lattice, const Eigen::VectorXd& u, const Eigen::VectorXd& v);

struct OracleFollowerResult {
    NodeProcess v;
    double J2 = 0.0;
    int iterations = 0;
    double gradient_map_norm = 0.0;
    bool polished = false;
    std::vector<double> objective_trace;
};

struct OracleSettings {
    double tol = 1e-10;
    int max_iter = 1000000;
};

OracleFollowerResult oracle_follower(const GameSpec& spec, const Lattice& lattice, const NodeProcess& leader_controls,
                                     const OracleSettings& settings = {});

struct OracleRestart {
    std::string start;
    double J1 = 0.0;
    int iterations = 0;
    double gradient_map_norm = 0.0;
    Eigen::VectorXd u;
};

struct OracleLeaderResult {
    NodeProcess u, v;
    double J1 = 0.0, J2 = 0.0;
    std::vector<OracleRestart> restarts;
    int best = 0;
};

struct OracleLeaderSettings {
    int restarts = 4;
    std::uint64_t seed = 7;
    double h = 1e-5;
    double tol = 1e-9;
    int max_iter = 2000;
};

/// Brute-force leader: finite-difference projected gradient over u with the follower solved exactly.
/// start, when given, is tried in addition to the random restarts.
OracleLeaderResult oracle_leader(const GameSpec& spec, const Lattice& lattice,
                                 const OracleLeaderSettings& settings = {}, const NodeProcess* start = nullptr);

}  // namespace stackgame
