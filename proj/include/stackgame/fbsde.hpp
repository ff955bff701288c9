#pragma once

#include <cstdint>
#include <vector>

#include "stackgame/core_model.hpp"
#include "stackgame/lattice.hpp"

namespace stackgame {

enum class System { Follower, Leader };

struct SolverSettings {
    double tol = 1e-10;
    int max_iter = 500;
    double blowup = 1e12;
};

/// Node processes of a solved follower or leader system on the full tree.
/// q, u, v, p1bar, p2bar live on layers 0..N-1; p1bar(i) = E[p1(i+1) | F_i].
/// For System::Follower, k and p1, q1 are zero and u holds the given leader controls.
struct FbsdeSolution {
    System system = System::Follower;
    NodeProcess x, k, p1, p2, q1, q2, u, v, p1bar, p2bar;
    int iterations = 0;
    double residual = 0.0;
    std::vector<double> history;
    double clamped_fraction = 0.0;
    bool clamp_warning = false;
};

/// Follower system for fixed leader controls (dim m1 node process), plain Picard.
FbsdeSolution solve_follower(const GameSpec& spec, const Lattice& lattice, const NodeProcess& leader_controls,
                             const SolverSettings& settings = {});

/// Leader system (x, k, p1, p2, q1, q2), plain Picard.
FbsdeSolution solve_leader_system(const GameSpec& spec, const Lattice& lattice, const SolverSettings& settings = {});

struct ContinuationReport {
    int steps = 0;
    std::vector<double> alpha;              // alpha at the end of each step
    std::vector<int> outer_iterations;      // iterations of the map per step
    std::vector<double> contraction_ratio;  // fitted ratio per step
    std::vector<std::vector<double>> history;
    int base_iterations = 0;                // fixed-point iterations spent on the alpha = 0 system
};

/// Homotopy in alpha from the decoupled system to the target system.
/// leader_controls is required for System::Follower and ignored otherwise.
FbsdeSolution solve_by_continuation(const GameSpec& spec, const Lattice& lattice, System system, int steps,
                                    const NodeProcess* leader_controls = nullptr,
                                    const SolverSettings& settings = {}, ContinuationReport* report = nullptr);

struct MaxPrincipleReport {
    NodeProcess r_u, r_v;          // projection residual per node
    NodeProcess vi_u, vi_v;        // smallest probe value per node
    double max_r_u = 0.0, max_r_v = 0.0;
    double worst_vi_u = 0.0, worst_vi_v = 0.0;
    int vi_violations = 0;
    int probes = 0;
    double tol = 0.0;
};

MaxPrincipleReport max_principle_residual(const GameSpec& spec, const Lattice& lattice, const FbsdeSolution& sol,
                                          int probes = 32, std::uint64_t seed = 1, double tol = 1e-8);

struct LatticeCosts {
    double J1 = 0.0, J2 = 0.0;
};

/// Exact lattice expectation of the discrete costs.
LatticeCosts lattice_costs(const GameSpec& spec, const Lattice& lattice, const NodeProcess& x, const NodeProcess& u,
                           const NodeProcess& v);

/// Forward state on the full tree under node controls.
NodeProcess forward_state(const GameSpec& spec, const Lattice& lattice, const NodeProcess& u, const NodeProcess& v);

/// Follower feedback v = G_i x with zero leader control and Gamma2 = R^m2,
/// from the discrete decoupling field p2 = K_i x. Works on either layout.
struct FollowerGains {
    std::vector<Eigen::MatrixXd> K;  // layers 0..N
    std::vector<Eigen::MatrixXd> G;  // layers 0..N-1
};

FollowerGains solve_follower_gains(const GameSpec& spec, const Lattice& lattice);

}  // namespace stackgame
