#pragma once

#include <Eigen/Dense>
#include <vector>

#include "stackgame/core_model.hpp"
#include "stackgame/lattice.hpp"

namespace stackgame {

/// Blocks of the augmented system in X = (x, k), P = (p1, p2), Q = (q1, q2).
struct AugmentedBlocks {
    Eigen::MatrixXd A, C, B1, B2, D1, D2, Q1;
};

struct AugmentedSystem {
    int n = 1;  // original state dimension; blocks are 2n x 2n
    double T = 1.0;
    std::vector<double> breakpoints;
    std::vector<AugmentedBlocks> pieces;
    Eigen::MatrixXd Phi;
    Eigen::VectorXd X0;

    const AugmentedBlocks& at(double t) const;
};

AugmentedSystem build_augmented(const GameSpec& spec);

/// dR/dt = -Pi(R) backward from R(T) = Phi on a uniform grid of M steps.
struct RiccatiSolution {
    std::vector<double> t;  // t[k] = k T / M
    std::vector<Eigen::MatrixXd> R, Xi;

    int steps() const { return static_cast<int>(t.size()) - 1; }
    /// Linear interpolation in time.
    Eigen::MatrixXd R_at(double s) const;
    Eigen::MatrixXd Xi_at(double s) const;
};

/// Xi = (I + R D2)^{-1}(R C - R D1 R); throws SingularMatrix when ill-conditioned.
Eigen::MatrixXd riccati_xi(const AugmentedBlocks& b, const Eigen::MatrixXd& R);
Eigen::MatrixXd riccati_pi(const AugmentedBlocks& b, const Eigen::MatrixXd& R);

RiccatiSolution solve_riccati(const AugmentedSystem& aug, int M);

struct FbsdeSolution;

/// Max-node distances |P - R X| (layers 0..N) and |Q - Xi X| (layers 0..N-1) between a leader-system
/// solution and the Riccati decoupling, with X = (x, k), P = (p1, p2), Q = (q1, q2).
struct DualityError {
    double P = 0.0, Q = 0.0;
};
DualityError duality_error(const Lattice& lattice, const FbsdeSolution& sol, const RiccatiSolution& ric);

struct UpsilonTransform {
    double lambda = 0.0, mu = 0.0;
    Eigen::Matrix2d Ups, Ups_inv;
    AugmentedSystem barred;  // B1 Ups, B2 Ups, D1 Ups, D2 Ups, Ups^{-1} Q1, Ups^{-1} Phi
    double max_asymmetry = 0.0;
    double min_eig_Q = 0.0, min_eig_Phi = 0.0;
};

/// Scalar state only; throws AssumptionViolated when the ratio conditions fail.
UpsilonTransform upsilon_transform(const GameSpec& spec, double tol = 1e-10);

struct SymmetrizedRiccati {
    RiccatiSolution bar;       // R-bar, Xi-bar
    RiccatiSolution mapped;    // Ups R-bar, Ups Xi-bar
};

SymmetrizedRiccati solve_symmetrized_riccati(const UpsilonTransform& ut, int M);

/// Single-player LQ Riccati in Tang form with constant data.
struct TangRiccatiSolution {
    std::vector<double> t;
    std::vector<Eigen::MatrixXd> K, Z;
    Eigen::MatrixXd B, D, N;

    /// Feedback gain u = G x at grid point k.
    Eigen::MatrixXd gain(int k) const;
    Eigen::MatrixXd gain_at(double s) const;
    Eigen::MatrixXd K_at(double s) const;
};

TangRiccatiSolution solve_tang_riccati(const Eigen::MatrixXd& A, const Eigen::MatrixXd& B, const Eigen::MatrixXd& C,
                                       const Eigen::MatrixXd& D, const Eigen::MatrixXd& Q, const Eigen::MatrixXd& N,
                                       const Eigen::MatrixXd& M, double T, int grid);

}  // namespace stackgame
