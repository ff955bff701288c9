#pragma once

#include <string>
#include <vector>

#include "stackgame/core_model.hpp"
#include "stackgame/fbsde.hpp"
#include "stackgame/lattice.hpp"

namespace stackgame {

/// Scalar ACLM leader problem on the full tree under the ansatz
/// chi = alpha x, p1 = beta x, p2 = gamma x, q1 = Delta1 x, q2 = Delta2 x.
///
/// Layers 0..N hold alpha, beta, gamma and xstar. All other processes live on layers 0..N-1.
/// beta_t and gamma_t are the one-step conditional coefficients: E[p1(i+1) | F_i] = beta_t x(i).
/// u2 is the bang-bang gain K sgn(alpha (B1 gamma_t + D1 Delta2)), u1 = -u2 xstar + F xstar with
/// F = -(B1 beta_t + D1 Delta1) / R1.
struct AclmSolution {
    double K = 0.0;
    NodeProcess alpha, beta, gamma, xstar;
    NodeProcess alpha2, beta2, gamma2;
    NodeProcess beta_t, gamma_t;
    NodeProcess delta1, delta2, xi1, xi2;
    NodeProcess sigma, u2, u1, F, G;
    int iterations = 0;
    double residual = 0.0;          // reconstruction residual of the Hamiltonian system
    double delta_residual = 0.0;    // residual of the 2x2 Delta system
    double alpha2_residual = 0.0;   // residual of the alpha2 identity
    std::vector<double> history;
};

struct AclmSettings {
    double tol = 1e-11;
    int max_iter = 2000;
    double relaxation = 0.5;  // weight kept on the previous switching function
};

/// Picard iteration: forward sweep for alpha, backward sweep for beta, gamma with per-node Delta solves.
/// Throws NotConverged, SingularMatrix, or std::invalid_argument on a non-scalar spec or Gamma2 != full space.
AclmSolution solve_aclm(const GameSpec& spec, const Lattice& lattice, double K, const AclmSettings& settings = {});

/// Leader feedback u(t_i, x) with the coefficients of node (i, j).
double leader_strategy(const AclmSolution& sol, int i, int j, double x);

/// Affine surrogate u = u2 x + u1 on layer i, coefficients averaged over the layer.
struct AffineCoefficients {
    double u2 = 0.0, u1 = 0.0;
};
AffineCoefficients leader_strategy_mean(const AclmSolution& sol, const Lattice& lattice, int i);

/// Node values of (x, chi, p1, p2, q1, q2) rebuilt from the ansatz, and the worst residual of the
/// discrete Hamiltonian system they satisfy.
struct Reconstruction {
    NodeProcess x, chi, p1, p2, q1, q2;
    double residual = 0.0;
    std::string worst;
};
Reconstruction reconstruct_hamiltonian(const GameSpec& spec, const Lattice& lattice, const AclmSolution& sol);

struct H3Report {
    NodeProcess du1;  // |dH3/du1| per node
    double max_du1 = 0.0;
    int zero_switches = 0;     // nodes with switching function exactly zero (u2 = 0)
    int sign_mismatches = 0;   // nodes where u2 != K sgn(switching function)
    double max_abs_u2 = 0.0;
};

/// Stationarity of H3 in u1 and consistency of the bang-bang rule.
/// u1 overrides the solution's u1 when given.
H3Report h3_stationarity_check(const GameSpec& spec, const Lattice& lattice, const AclmSolution& sol,
                               const NodeProcess* u1 = nullptr);

}  // namespace stackgame
