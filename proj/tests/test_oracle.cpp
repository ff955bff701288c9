#include <doctest.h>

#include <random>

#include "fixtures.hpp"
#include "generators.hpp"
#include "stackgame/fbsde.hpp"
#include "stackgame/oracle.hpp"

using namespace stackgame;
using Eigen::VectorXd;

namespace {

NodeProcess random_controls(const Lattice& lat, std::mt19937_64& rng, double scale) {
    NodeProcess p(lat, 1);
    for (int i = 0; i < lat.N(); ++i)
        p.layer(i) = scale * gen::gaussian(rng, lat.nodes(i)).transpose();
    return p;
}

bool clamped(double v, double lo, double hi) { return std::abs(v - lo) <= 1e-7 || std::abs(v - hi) <= 1e-7; }

}  // namespace

TEST_CASE("flattening round trip") {
    std::mt19937_64 rng(1);
    const Lattice lat(1.0, 4, Layout::Full);
    const NodeProcess p = random_controls(lat, rng, 1.0);
    const VectorXd flat = flatten_controls(p, lat);
    CHECK(flat.size() == lat.interior_nodes());
    CHECK(unflatten_controls(flat, lat, 1).sup_distance(p, 0, lat.N() - 1) == 0.0);
}

TEST_CASE("follower gradient matches central differences") {
    std::mt19937_64 rng(2);
    const GameSpec s = fixtures::scalar();
    const Lattice lat(1.0, 3, Layout::Full);
    const VectorXd u = flatten_controls(random_controls(lat, rng, 0.5), lat);
    const VectorXd v = flatten_controls(random_controls(lat, rng, 0.5), lat);
    const OracleObjective o = follower_objective(s, lat, u, v);
    const double h = 1e-6;
    for (int k = 0; k < v.size(); ++k) {
        VectorXd vp = v, vm = v;
        vp[k] += h;
        vm[k] -= h;
        const double fd = (follower_objective(s, lat, u, vp).value - follower_objective(s, lat, u, vm).value) / (2 * h);
        CHECK(o.gradient[k] == doctest::Approx(fd).epsilon(1e-6));
    }
    const NodeProcess x = forward_state(s, lat, unflatten_controls(u, lat, 1), unflatten_controls(v, lat, 1));
    const LatticeCosts J = lattice_costs(s, lat, x, unflatten_controls(u, lat, 1), unflatten_controls(v, lat, 1));
    CHECK(o.value == doctest::Approx(J.J2).epsilon(1e-14));
    CHECK(leader_cost(s, lat, u, v) == doctest::Approx(J.J1).epsilon(1e-14));
}

TEST_CASE("follower without state cost only pays for control") {
    GameSpec s = fixtures::scalar();
    s.pieces[0].Q2(0, 0) = 0.0;
    s.Phi2(0, 0) = 0.0;
    s.gamma2 = ConstraintSet::interval(0.2, 0.6);
    const Lattice lat(1.0, 3, Layout::Full);
    std::mt19937_64 rng(3);
    const OracleFollowerResult r = oracle_follower(s, lat, random_controls(lat, rng, 1.0));
    for (int i = 0; i < lat.N(); ++i)
        CHECK(r.v.layer(i).isConstant(0.2, 1e-9));
}

TEST_CASE("oracle follower agrees with the adjoint solver") {
    std::mt19937_64 rng(4);
    const Lattice lat(1.0, 3, Layout::Full);
    const NodeProcess u = random_controls(lat, rng, 0.5);

    const GameSpec s = fixtures::scalar();
    const OracleFollowerResult r = oracle_follower(s, lat, u);
    const FbsdeSolution y = solve_follower(s, lat, u, SolverSettings{1e-12, 500});
    CHECK(r.v.sup_distance(y.v, 0, lat.N() - 1) <= 1e-6);

    // the adjoint solution satisfies the oracle's first-order conditions
    const OracleObjective o = follower_objective(s, lat, flatten_controls(u, lat), flatten_controls(y.v, lat));
    CHECK(o.gradient.cwiseAbs().maxCoeff() <= 1e-8);
    CHECK(max_principle_residual(s, lat, y).max_r_v <= 1e-8);

    // the objective trace descends monotonically
    for (std::size_t k = 1; k < r.objective_trace.size(); ++k)
        CHECK(r.objective_trace[k] <= r.objective_trace[k - 1] + 1e-15);
}

TEST_CASE("active sets agree under a tight follower constraint") {
    GameSpec s = fixtures::scalar();
    s.pieces[0].Q2(0, 0) = 8.0;
    s.Phi2(0, 0) = 4.0;
    s.gamma2 = ConstraintSet::interval(-0.5, 0.5);
    const Lattice lat(1.0, 3, Layout::Full);
    NodeProcess u(lat, 1);
    for (int i = 0; i < lat.N(); ++i)
        u.layer(i).setConstant(0.4);
    const OracleFollowerResult r = oracle_follower(s, lat, u);
    const FbsdeSolution y = solve_follower(s, lat, u, SolverSettings{1e-12, 500});
    CHECK(r.v.sup_distance(y.v, 0, lat.N() - 1) <= 1e-6);
    int active = 0;
    for (int i = 0; i < lat.N(); ++i)
        for (int j = 0; j < lat.nodes(i); ++j) {
            const bool a = clamped(r.v.at(i, j)[0], -0.5, 0.5), b = clamped(y.v.at(i, j)[0], -0.5, 0.5);
            CHECK(a == b);
            active += a;
        }
    CHECK(active > 0);
}

TEST_CASE("leader without control channels pays only for control") {
    GameSpec s = fixtures::scalar();
    s.pieces[0].B1(0, 0) = 0.0;
    s.pieces[0].D1(0, 0) = 0.0;
    s.gamma1 = ConstraintSet::interval(0.1, 1.0);
    const Lattice lat(1.0, 2, Layout::Full);
    const OracleLeaderResult r = oracle_leader(s, lat);
    for (int i = 0; i < lat.N(); ++i)
        CHECK(r.u.layer(i).isConstant(0.1, 1e-6));
}

TEST_CASE("unconstrained leader oracle reproduces the adjoint solution") {
    const GameSpec s = fixtures::scalar();
    const Lattice lat(1.0, 3, Layout::Full);
    const FbsdeSolution y = solve_leader_system(s, lat);
    const LatticeCosts J = lattice_costs(s, lat, y.x, y.u, y.v);
    CHECK(J.J1 == doctest::Approx(1.0933575474).epsilon(1e-9));
    CHECK(J.J2 == doctest::Approx(0.5288981397).epsilon(1e-9));
    const OracleLeaderResult r = oracle_leader(s, lat);
    CHECK(std::abs(r.J1 - J.J1) <= 1e-6);
    CHECK(r.u.sup_distance(y.u, 0, lat.N() - 1) <= 1e-4);
    CHECK(r.v.sup_distance(y.v, 0, lat.N() - 1) <= 1e-4);
    CHECK(r.restarts.size() >= 4);
}

TEST_CASE("constrained leader oracle finds no better point") {
    const GameSpec s = fixtures::constrained();
    const Lattice lat(1.0, 3, Layout::Full);
    const FbsdeSolution y = solve_leader_system(s, lat);
    const LatticeCosts J = lattice_costs(s, lat, y.x, y.u, y.v);
    CHECK(J.J1 == doctest::Approx(1.1116826248).epsilon(1e-9));
    CHECK(J.J2 == doctest::Approx(0.5387892777).epsilon(1e-9));
    const OracleLeaderResult r = oracle_leader(s, lat, OracleLeaderSettings{}, &y.u);
    for (const auto& rs : r.restarts)
        CHECK(J.J1 <= rs.J1 + 1e-6);
    CHECK(r.u.sup_distance(y.u, 0, lat.N() - 1) <= 1e-4);
    CHECK(r.v.sup_distance(y.v, 0, lat.N() - 1) <= 1e-4);
    CHECK(std::abs(r.J1 - J.J1) <= 1e-6);
    CHECK(std::abs(r.J2 - J.J2) <= 1e-6);
    for (int i = 0; i < lat.N(); ++i)
        for (int j = 0; j < lat.nodes(i); ++j) {
            CHECK(clamped(r.u.at(i, j)[0], -0.4, 1.0) == clamped(y.u.at(i, j)[0], -0.4, 1.0));
            CHECK(clamped(r.v.at(i, j)[0], -0.2, 0.5) == clamped(y.v.at(i, j)[0], -0.2, 0.5));
        }
}

TEST_CASE("oracle input errors") {
    const GameSpec s = fixtures::scalar();
    CHECK_THROWS_AS(oracle_leader(s, Lattice(1.0, 3, Layout::Recombining)), std::invalid_argument);
    CHECK_THROWS_AS(oracle_leader(s, Lattice(1.0, 7, Layout::Full)), std::invalid_argument);
    OracleLeaderSettings few;
    few.restarts = 2;
    CHECK_THROWS_AS(oracle_leader(s, Lattice(1.0, 2, Layout::Full), few), std::invalid_argument);
}
