#pragma once

#include <Eigen/Dense>
#include <string>
#include <vector>

#include "stackgame/projection.hpp"

namespace stackgame {

/// Coefficient matrices on one interval of the breakpoint grid.
struct Coefficients {
    Eigen::MatrixXd A, B1, B2, C, D1, D2, Q1, Q2, R1, R2;

    bool operator==(const Coefficients& o) const;
};

/// One LQ Stackelberg game instance with piecewise-constant coefficients.
/// pieces[k] holds on [breakpoints[k], breakpoints[k+1]); breakpoints[0] == 0.
struct GameSpec {
    int n = 1, m1 = 1, m2 = 1;
    double T = 1.0;
    Eigen::VectorXd x0;
    std::vector<double> breakpoints{0.0};
    std::vector<Coefficients> pieces;
    Eigen::MatrixXd Phi1, Phi2;
    ConstraintSet gamma1, gamma2;

    const Coefficients& at(double t) const;
    /// Throws MalformedSpec on inconsistent shapes or grids.
    void check_dimensions() const;

    bool operator==(const GameSpec& o) const;

    /// Constant-coefficient instance.
    static GameSpec constant(const Coefficients& c, double T, Eigen::VectorXd x0, Eigen::MatrixXd Phi1,
                             Eigen::MatrixXd Phi2, ConstraintSet g1, ConstraintSet g2);
    /// Scalar constant-coefficient instance with full-space constraints.
    static GameSpec scalar(double A, double B1, double B2, double C, double D1, double D2, double Q1, double Q2,
                           double R1, double R2, double Phi1, double Phi2, double T, double x0);
};

struct CheckResult {
    std::string name;
    bool pass = true;
    double residual = 0.0;
};

struct ValidationReport {
    std::vector<CheckResult> checks;
    bool pass() const;
    const CheckResult* find(const std::string& prefix) const;
};

ValidationReport validate_spec(const GameSpec& spec, double delta_R = 1e-6);

double hamiltonian_h2(const GameSpec& spec, double t, const Eigen::VectorXd& x, const Eigen::VectorXd& u,
                      const Eigen::VectorXd& v, const Eigen::VectorXd& p2, const Eigen::VectorXd& q2);

double hamiltonian_h1(const GameSpec& spec, double t, const Eigen::VectorXd& u, const Eigen::VectorXd& x,
                      const Eigen::VectorXd& k, const Eigen::VectorXd& p1, const Eigen::VectorXd& p2,
                      const Eigen::VectorXd& q1, const Eigen::VectorXd& q2);

}  // namespace stackgame
