#include <doctest.h>

#include <cmath>

#include "fixtures.hpp"
#include "stackgame/aclm.hpp"
#include "stackgame/errors.hpp"
#include "stackgame/riccati.hpp"

using namespace stackgame;
using Eigen::MatrixXd;

namespace {

/// Independent solver for the scalar problem without diffusion control terms (D1 = D2 = 0).
struct Reduced {
    std::vector<std::vector<double>> alpha, beta, gamma, u2;
};

Reduced reduced_aclm(double A, double B1, double B2, double C, double Q1, double Q2, double R1, double R2,
                     double Phi1, double Phi2, double x0, int N, double K) {
    (void)x0;
    const double dt = 1.0 / N, sq = std::sqrt(dt);
    const double b1 = B1 * B1 / R1, b2 = B2 * B2 / R2;
    Reduced r;
    auto layers = [N](std::vector<std::vector<double>>& v, int count) {
        v.assign(count, {});
        for (int i = 0; i < count; ++i)
            v[i].assign(std::size_t(1) << i, 0.0);
        (void)N;
    };
    layers(r.alpha, N + 1);
    layers(r.beta, N + 1);
    layers(r.gamma, N + 1);
    layers(r.u2, N);
    auto sigma = r.u2, bt = r.u2, gt = r.u2;
    auto sign = [](double v) { return double((v > 0) - (v < 0)); };
    for (int it = 0; it < 2000; ++it) {
        const auto a_old = r.alpha, b_old = r.beta, g_old = r.gamma, u_old = r.u2;
        for (std::size_t j = 0; j < r.beta[N].size(); ++j) {
            r.beta[N][j] = Phi1 - Phi2 * r.alpha[N][j];
            r.gamma[N][j] = Phi2;
        }
        for (int i = N - 1; i >= 0; --i)
            for (std::size_t j = 0; j < r.beta[i].size(); ++j) {
                const double bu = r.beta[i + 1][2 * j + 1], bd = r.beta[i + 1][2 * j];
                const double gu = r.gamma[i + 1][2 * j + 1], gd = r.gamma[i + 1][2 * j];
                const double bbar = 0.5 * (bu + bd), bz = (bu - bd) / (2 * sq);
                const double gbar = 0.5 * (gu + gd), gz = (gu - gd) / (2 * sq);
                // (1 + bbar dt b1) bt + bbar dt b2 gt = bbar (1 + A dt) + bz C dt, same for gamma
                const double m11 = 1 + bbar * dt * b1, m12 = bbar * dt * b2;
                const double m21 = gbar * dt * b1, m22 = 1 + gbar * dt * b2;
                const double r1 = bbar * (1 + A * dt) + bz * C * dt, r2 = gbar * (1 + A * dt) + gz * C * dt;
                const double det = m11 * m22 - m12 * m21;
                const double b = (r1 * m22 - m12 * r2) / det, g = (m11 * r2 - m21 * r1) / det;
                const double a = A - b1 * b - b2 * g;
                const double d1 = bz * (1 + a * dt) + bbar * C;
                const double d2 = gz * (1 + a * dt) + gbar * C;
                const double al = r.alpha[i][j];
                const double s = al * B1 * g;
                sigma[i][j] = it == 0 ? s : 0.5 * sigma[i][j] + 0.5 * s;
                const double u = K * sign(sigma[i][j]);
                r.u2[i][j] = u;
                bt[i][j] = b;
                gt[i][j] = g;
                r.beta[i][j] = b + (A * b + C * d1 - Q2 * al + Q1) * dt;
                r.gamma[i][j] = g + ((A + B1 * u) * g + C * d2 + Q2) * dt;
            }
        for (int i = 0; i < N; ++i)
            for (std::size_t j = 0; j < r.alpha[i].size(); ++j) {
                const double al = r.alpha[i][j], u = r.u2[i][j];
                const double a = A - b1 * bt[i][j] - b2 * gt[i][j];
                const double m = (A + B1 * u) * al + b2 * bt[i][j];
                const double v = C * al;
                r.alpha[i + 1][2 * j] = (al + m * dt - v * sq) / (1 + a * dt - C * sq);
                r.alpha[i + 1][2 * j + 1] = (al + m * dt + v * sq) / (1 + a * dt + C * sq);
            }
        if (it == 0)
            continue;
        double d = 0.0;
        for (int i = 0; i <= N; ++i)
            for (std::size_t j = 0; j < r.alpha[i].size(); ++j) {
                d = std::max({d, std::abs(r.alpha[i][j] - a_old[i][j]), std::abs(r.beta[i][j] - b_old[i][j]),
                              std::abs(r.gamma[i][j] - g_old[i][j])});
                if (i < N)
                    d = std::max(d, std::abs(r.u2[i][j] - u_old[i][j]));
            }
        if (d <= 1e-13)
            return r;
    }
    throw std::runtime_error("reduced solver did not converge");
}

}  // namespace

TEST_CASE("scalar fixture converges with a consistent reconstruction") {
    const GameSpec s = fixtures::scalar();
    const Lattice lat(1.0, 8, Layout::Full);
    const AclmSolution sol = solve_aclm(s, lat, 0.5);
    CHECK(sol.residual <= 1e-8);
    CHECK(sol.delta_residual <= 1e-8);
    CHECK(sol.alpha2_residual <= 1e-8);
    CHECK(sol.u2.sup_norm(0, lat.N() - 1) <= 0.5);
    const Reconstruction rec = reconstruct_hamiltonian(s, lat, sol);
    CHECK(rec.residual == sol.residual);
    const H3Report h3 = h3_stationarity_check(s, lat, sol);
    CHECK(h3.max_du1 <= 1e-8);
    CHECK(h3.sign_mismatches == 0);
    CHECK(h3.max_abs_u2 <= 0.5);
    CHECK(sol.iterations > 0);
    CHECK(sol.history.back() <= 1e-11);
}

TEST_CASE("boundary conditions hold exactly") {
    const GameSpec s = fixtures::scalar();
    const Lattice lat(1.0, 6, Layout::Full);
    const AclmSolution sol = solve_aclm(s, lat, 0.5);
    CHECK(sol.alpha.at(0, 0)[0] == 0.0);
    CHECK(sol.xstar.at(0, 0)[0] == s.x0[0]);
    for (int j = 0; j < lat.nodes(6); ++j) {
        CHECK(sol.gamma.at(6, j)[0] == s.Phi2(0, 0));
        // beta(T) is built from the alpha of the previous sweep
        CHECK(std::abs(sol.beta.at(6, j)[0] - (s.Phi1(0, 0) - s.Phi2(0, 0) * sol.alpha.at(6, j)[0])) <= 1e-10);
    }
}

TEST_CASE("bang-bang gain stays within the bound for several gains") {
    const GameSpec s = fixtures::scalar();
    const Lattice lat(1.0, 6, Layout::Full);
    for (double K : {0.1, 0.5, 1.0}) {
        const AclmSolution sol = solve_aclm(s, lat, K);
        for (int i = 0; i < lat.N(); ++i)
            for (int j = 0; j < lat.nodes(i); ++j) {
                const double u2 = sol.u2.at(i, j)[0];
                CHECK((u2 == K || u2 == -K || u2 == 0.0));
            }
        CHECK(sol.residual <= 1e-8);
    }
}

TEST_CASE("silent follower decouples the leader problem") {
    GameSpec s = fixtures::scalar();
    auto& c = s.pieces[0];
    c.Q2(0, 0) = c.B2(0, 0) = c.D2(0, 0) = 0.0;
    s.Phi2(0, 0) = 0.0;
    const Lattice lat(1.0, 8, Layout::Full);
    const AclmSolution sol = solve_aclm(s, lat, 0.5);
    CHECK(sol.alpha.sup_norm() == 0.0);
    CHECK(sol.gamma.sup_norm() == 0.0);
    CHECK(sol.u2.sup_norm(0, lat.N() - 1) == 0.0);
    CHECK(sol.residual <= 1e-8);
    const H3Report h3 = h3_stationarity_check(s, lat, sol);
    CHECK(h3.zero_switches == lat.interior_nodes());
    // open loop: the strategy does not depend on the realized state
    CHECK(leader_strategy(sol, 3, 2, 0.7) == leader_strategy(sol, 3, 2, -4.0));

    // beta is the decoupling field of the leader's own LQ problem
    const TangRiccatiSolution ref = solve_tang_riccati(c.A, c.B1, c.C, c.D1, c.Q1, c.R1, s.Phi1, s.T, 2000);
    CHECK(std::abs(sol.beta.at(0, 0)[0] - ref.K[0](0, 0)) <= 0.5 * lat.dt());
}

TEST_CASE("reduced form without diffusion control matches an independent solver") {
    const double A = 0.2, B1 = 0.3, B2 = 0.4, C = 0.1, Q1 = 1.0, Q2 = 0.5, R1 = 1.0, R2 = 1.5, P1 = 1.0, P2 = 0.5;
    const GameSpec s = GameSpec::scalar(A, B1, B2, C, 0.0, 0.0, Q1, Q2, R1, R2, P1, P2, 1.0, 1.0);
    const int N = 7;
    const double K = 0.5;
    const Lattice lat(1.0, N, Layout::Full);
    const AclmSolution sol = solve_aclm(s, lat, K, AclmSettings{1e-13, 2000, 0.5});
    const Reduced ref = reduced_aclm(A, B1, B2, C, Q1, Q2, R1, R2, P1, P2, 1.0, N, K);
    double worst = 0.0;
    for (int i = 0; i <= N; ++i)
        for (int j = 0; j < lat.nodes(i); ++j) {
            worst = std::max({worst, std::abs(sol.alpha.at(i, j)[0] - ref.alpha[i][j]),
                              std::abs(sol.beta.at(i, j)[0] - ref.beta[i][j]),
                              std::abs(sol.gamma.at(i, j)[0] - ref.gamma[i][j])});
            if (i < N)
                CHECK(sol.u2.at(i, j)[0] == ref.u2[i][j]);
        }
    CHECK(worst <= 1e-9);
}

TEST_CASE("reduced strategy on the reference path is the open-loop part") {
    const GameSpec s = GameSpec::scalar(0.2, 0.3, 0.4, 0.1, 0.0, 0.0, 1.0, 0.5, 1.0, 1.5, 1.0, 0.5, 1.0, 1.0);
    const Lattice lat(1.0, 6, Layout::Full);
    const AclmSolution sol = solve_aclm(s, lat, 0.5);
    for (int i = 0; i < lat.N(); ++i)
        for (int j = 0; j < lat.nodes(i); ++j) {
            const double xs = sol.xstar.at(i, j)[0];
            const double open_loop = -0.3 * sol.beta_t.at(i, j)[0] / 1.0 * xs;
            CHECK(leader_strategy(sol, i, j, xs) == doctest::Approx(open_loop).epsilon(1e-13));
            const double x = xs + 0.37;
            CHECK(leader_strategy(sol, i, j, x) - leader_strategy(sol, i, j, xs) ==
                  doctest::Approx(sol.u2.at(i, j)[0] * 0.37).epsilon(1e-12));
        }
}

TEST_CASE("general strategy on the reference path") {
    const GameSpec s = fixtures::scalar();
    const auto& c = s.pieces[0];
    const Lattice lat(1.0, 5, Layout::Full);
    const AclmSolution sol = solve_aclm(s, lat, 0.5);
    for (int i = 0; i < lat.N(); ++i)
        for (int j = 0; j < lat.nodes(i); ++j) {
            const double xs = sol.xstar.at(i, j)[0];
            const double expect =
                -(c.B1(0, 0) * sol.beta_t.at(i, j)[0] + c.D1(0, 0) * sol.delta1.at(i, j)[0]) / c.R1(0, 0) * xs;
            CHECK(leader_strategy(sol, i, j, xs) == doctest::Approx(expect).epsilon(1e-13));
            CHECK(sol.u2.at(i, j)[0] * xs + sol.u1.at(i, j)[0] == doctest::Approx(expect).epsilon(1e-13));
        }
    const AffineCoefficients m = leader_strategy_mean(sol, lat, 0);
    CHECK(m.u2 == sol.u2.at(0, 0)[0]);
    CHECK(m.u1 == sol.u1.at(0, 0)[0]);
}

TEST_CASE("a corrupted open-loop term is flagged at its node") {
    const GameSpec s = fixtures::scalar();
    const Lattice lat(1.0, 5, Layout::Full);
    const AclmSolution sol = solve_aclm(s, lat, 0.5);
    NodeProcess u1 = sol.u1;
    u1.at(3, 5)[0] += 0.25;
    const H3Report h3 = h3_stationarity_check(s, lat, sol, &u1);
    CHECK(h3.du1.at(3, 5)[0] == doctest::Approx(s.pieces[0].R1(0, 0) * 0.25).epsilon(1e-10));
    for (int i = 0; i < lat.N(); ++i)
        for (int j = 0; j < lat.nodes(i); ++j)
            if (i != 3 || j != 5)
                CHECK(h3.du1.at(i, j)[0] <= 1e-8);
}

TEST_CASE("input errors") {
    const Lattice lat(1.0, 4, Layout::Full);
    CHECK_THROWS_AS(solve_aclm(fixtures::scalar(), lat, 0.0), std::invalid_argument);
    GameSpec c = fixtures::scalar();
    c.gamma2 = ConstraintSet::interval(-1.0, 1.0);
    CHECK_THROWS_AS(solve_aclm(c, lat, 0.5), std::invalid_argument);
    CHECK_THROWS_AS(solve_aclm(fixtures::scalar(), Lattice(1.0, 4, Layout::Recombining), 0.5),
                    std::invalid_argument);
    const MatrixXd I = MatrixXd::Identity(2, 2);
    Coefficients co{I, I, I, I, I, I, I, I, I, I};
    const GameSpec two = GameSpec::constant(co, 1.0, Eigen::VectorXd::Ones(2), I, I, ConstraintSet::full(2),
                                            ConstraintSet::full(2));
    CHECK_THROWS_AS(solve_aclm(two, lat, 0.5), std::invalid_argument);
    CHECK_THROWS_AS(solve_aclm(fixtures::scalar(), lat, 0.5, AclmSettings{1e-15, 1, 0.5}), NotConverged);
}
