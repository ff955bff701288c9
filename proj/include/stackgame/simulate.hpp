#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "stackgame/aclm.hpp"
#include "stackgame/core_model.hpp"
#include "stackgame/fbsde.hpp"
#include "stackgame/lattice.hpp"
#include "stackgame/riccati.hpp"

namespace stackgame {

struct SimConfig {
    int paths = 10000;
    int steps = 100;
    std::uint64_t seed = 1;
    bool antithetic = true;
    int threads = 0;  // 0: STACKGAME_THREADS, else hardware concurrency

    void check() const;
    bool operator==(const SimConfig&) const = default;
};

/// Means and standard errors of the two costs. With antithetic sampling each pair average is one sample,
/// so samples = paths / 2.
struct CostEstimate {
    double J1 = 0.0, J2 = 0.0;
    double se1 = 0.0, se2 = 0.0;
    int samples = 0;
    int paths = 0;
};

/// Closed-loop strategy pair with an optional auxiliary state driven by the same Brownian motion.
class Strategy {
public:
    virtual ~Strategy() = default;
    virtual std::string source() const = 0;
    virtual int aux_dim() const { return 0; }
    virtual void init(Eigen::VectorXd& /*aux*/) const {}
    virtual void controls(int step, double t, const Eigen::VectorXd& x, const Eigen::VectorXd& aux, Eigen::VectorXd& u,
                          Eigen::VectorXd& v) const = 0;
    virtual void advance(int /*step*/, double /*t*/, double /*dt*/, double /*dW*/, const Eigen::VectorXd& /*x*/,
                         Eigen::VectorXd& /*aux*/) const {}
    /// When true, increments are +-sqrt(dt) coin flips and steps must equal the lattice depth.
    virtual bool lattice_walk() const { return false; }
};

/// AOL feedback from the augmented Riccati solution, carrying the auxiliary state k.
std::unique_ptr<Strategy> riccati_strategy(const GameSpec& spec, const RiccatiSolution& ric);

enum class LatticeLookup {
    Walk,     // follow the realized node of a lattice walk
    Nearest,  // layer floor(t / dt), node nearest in state
};

/// Node controls of a lattice solution. Nearest lookup needs the node states x.
std::unique_ptr<Strategy> lattice_strategy(const Lattice& lattice, const NodeProcess& u, const NodeProcess& v,
                                           LatticeLookup lookup, const NodeProcess* x = nullptr);

/// Leader strategy (u2, u1 per step) with the follower's exact best response computed from
/// the affine follower Riccati equations on the simulation grid. Scalar, unconstrained follower.
struct AffineFollowerResponse {
    std::vector<double> K, h;  // value function 1/2 K x^2 + h x on the grid, size steps + 1
    std::vector<double> G, g;  // v = G x + g, size steps
};
AffineFollowerResponse affine_follower_response(const GameSpec& spec, int steps, const std::vector<double>& u2,
                                                const std::vector<double>& u1);
std::unique_ptr<Strategy> affine_leader_strategy(const GameSpec& spec, int steps, std::vector<double> u2,
                                                 std::vector<double> u1);

/// ACLM leader strategy. Walk: node coefficients along a lattice walk, follower v = G x from the solution.
/// Nearest is not used; any other lookup averages the coefficients over each layer and lets the follower
/// best-respond on a grid of `steps` steps.
std::unique_ptr<Strategy> aclm_strategy(const GameSpec& spec, const Lattice& lattice, const AclmSolution& sol,
                                        LatticeLookup lookup, int steps);

/// Euler-Maruyama with left-endpoint cost quadrature. Terminal states are stored when requested.
CostEstimate simulate_costs(const GameSpec& spec, const Strategy& strategy, const SimConfig& cfg,
                            std::vector<Eigen::VectorXd>* terminal = nullptr);

/// Worker count used for a configuration.
int resolve_threads(int requested);

enum class Role { Leader, Follower };

struct ProbeReport {
    Role role = Role::Follower;
    double eps = 0.0, tol = 0.0;
    std::vector<double> delta, stderr_;
    double worst_margin = 0.0;  // min over trials of delta + 3 stderr + tol
    int improving = 0;          // trials with delta < -(3 stderr + tol)
    bool pass() const { return improving == 0; }
};

/// Random admissible perturbations of a lattice solution, costs compared with common random numbers
/// on lattice walks. Leader trials re-solve the follower.
ProbeReport perturbation_probe(const GameSpec& spec, const Lattice& lattice, const NodeProcess& u,
                               const NodeProcess& v, const SimConfig& cfg, Role role, int trials, double eps,
                               double tol = 1e-4, std::uint64_t probe_seed = 11);

struct GridSearchResult {
    double u2 = 0.0, u1 = 0.0;
    CostEstimate best;
    int evaluated = 0;
};

/// Best constant affine leader strategy u = u2 x + u1 over a grid, follower best-responding.
GridSearchResult grid_search_affine(const GameSpec& spec, double K, int n_u2, double u1_lo, double u1_hi, int n_u1,
                                    const SimConfig& cfg);

}  // namespace stackgame
