#include <doctest.h>

#include <random>

#include "fixtures.hpp"
#include "generators.hpp"
#include "stackgame/core_model.hpp"
#include "stackgame/errors.hpp"

using namespace stackgame;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

VectorXd s1(double v) { return VectorXd::Constant(1, v); }

GameSpec ones() { return GameSpec::scalar(1, 1, 1, 1, 1, 1, 1, 1, 1, 1, 1, 1, 1.0, 1.0); }

GameSpec two_dim(const MatrixXd& Q1) {
    const MatrixXd I = MatrixXd::Identity(2, 2);
    Coefficients c{0.1 * I, I, I, 0.05 * I, 0.1 * I, 0.1 * I, Q1, I, I, I};
    return GameSpec::constant(c, 1.0, VectorXd::Ones(2), I, I, ConstraintSet::full(2), ConstraintSet::full(2));
}

}  // namespace

TEST_CASE("identity weights pass every check") {
    const ValidationReport rep = validate_spec(ones());
    CHECK(rep.pass());
    CHECK(!rep.checks.empty());
    CHECK(validate_spec(fixtures::scalar()).pass());
    CHECK(validate_spec(fixtures::constrained()).pass());
}

TEST_CASE("zero follower weight fails uniform positivity") {
    GameSpec s = ones();
    s.pieces[0].R2(0, 0) = 0.0;
    const ValidationReport rep = validate_spec(s);
    CHECK_FALSE(rep.pass());
    const CheckResult* c = rep.find("uniform positivity R2");
    REQUIRE(c != nullptr);
    CHECK_FALSE(c->pass);
    CHECK(c->residual == 0.0);
    CHECK(rep.find("uniform positivity R1")->pass);
}

TEST_CASE("asymmetric state weight fails symmetry with the max-entry residual") {
    MatrixXd Q1(2, 2);
    Q1 << 1.0, 2.0, 0.0, 1.0;
    const ValidationReport rep = validate_spec(two_dim(Q1));
    CHECK_FALSE(rep.pass());
    const CheckResult* c = rep.find("symmetry Q1");
    REQUIRE(c != nullptr);
    CHECK_FALSE(c->pass);
    CHECK(c->residual == 2.0);
}

TEST_CASE("indefinite terminal weight fails nonnegativity") {
    GameSpec s = ones();
    s.Phi2(0, 0) = -0.5;
    const ValidationReport rep = validate_spec(s);
    CHECK_FALSE(rep.find("nonnegativity Phi2")->pass);
    CHECK(rep.find("nonnegativity Phi2")->residual == -0.5);
}

TEST_CASE("validation is deterministic and idempotent") {
    std::mt19937_64 rng(4);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    for (int trial = 0; trial < 50; ++trial) {
        GameSpec s = GameSpec::scalar(u(rng), u(rng), u(rng), u(rng), u(rng), u(rng), u(rng), u(rng), u(rng), u(rng),
                                      u(rng), u(rng), 1.0, 1.0);
        const ValidationReport a = validate_spec(s), b = validate_spec(s);
        REQUIRE(a.checks.size() == b.checks.size());
        for (std::size_t k = 0; k < a.checks.size(); ++k) {
            CHECK(a.checks[k].name == b.checks[k].name);
            CHECK(a.checks[k].pass == b.checks[k].pass);
            CHECK(a.checks[k].residual == b.checks[k].residual);
        }
        CHECK(a.pass() == b.pass());
    }
}

TEST_CASE("shape errors") {
    GameSpec s = fixtures::scalar();
    s.pieces[0].B1 = MatrixXd::Ones(2, 1);
    CHECK_THROWS_AS(s.check_dimensions(), MalformedSpec);
    CHECK_THROWS_AS(validate_spec(s), MalformedSpec);
    s = fixtures::scalar();
    s.T = 0.0;
    CHECK_THROWS_AS(s.check_dimensions(), MalformedSpec);
    s = fixtures::scalar();
    s.gamma2 = ConstraintSet::orthant(2);
    CHECK_THROWS_AS(s.check_dimensions(), MalformedSpec);
    s = fixtures::scalar();
    s.breakpoints = {0.0, 1.5};
    s.pieces.push_back(s.pieces[0]);
    CHECK_THROWS_AS(s.check_dimensions(), MalformedSpec);
}

TEST_CASE("piecewise coefficients select the interval containing t") {
    GameSpec s = fixtures::scalar();
    Coefficients late = s.pieces[0];
    late.A(0, 0) = -1.0;
    s.breakpoints = {0.0, 0.5};
    s.pieces.push_back(late);
    s.check_dimensions();
    CHECK(s.at(0.0).A(0, 0) == 0.2);
    CHECK(s.at(0.4999).A(0, 0) == 0.2);
    CHECK(s.at(0.5).A(0, 0) == -1.0);
    CHECK(s.at(1.0).A(0, 0) == -1.0);
    CHECK_FALSE(s == fixtures::scalar());
    CHECK(fixtures::scalar() == fixtures::scalar());
}

TEST_CASE("follower Hamiltonian values") {
    const GameSpec s = ones();
    CHECK(hamiltonian_h2(s, 0.0, s1(0), s1(0), s1(0), s1(0), s1(0)) == 0.0);
    CHECK(hamiltonian_h2(s, 0.0, s1(1), s1(1), s1(1), s1(1), s1(1)) == 7.0);
}

TEST_CASE("follower Hamiltonian reduces to the control cost at the origin") {
    std::mt19937_64 rng(8);
    for (int k = 0; k < 100; ++k) {
        const VectorXd u = gen::gaussian(rng, 2), v = gen::gaussian(rng, 2), z = VectorXd::Zero(2);
        MatrixXd I = MatrixXd::Identity(2, 2);
        GameSpec s = two_dim(I);
        s.pieces[0].R2 = gen::metric(rng, 2, gen::MetricKind::Dense);
        CHECK(hamiltonian_h2(s, 0.3, z, u, v, z, z) == 0.5 * v.dot(s.pieces[0].R2 * v));
    }
}

TEST_CASE("follower Hamiltonian is strictly convex in v") {
    std::mt19937_64 rng(10);
    const MatrixXd I = MatrixXd::Identity(2, 2);
    for (int k = 0; k < 200; ++k) {
        GameSpec s = two_dim(I);
        s.pieces[0].R2 = gen::metric(rng, 2, gen::MetricKind::Dense);
        const VectorXd x = gen::gaussian(rng, 2), u = gen::gaussian(rng, 2), v = gen::gaussian(rng, 2);
        const VectorXd p = gen::gaussian(rng, 2), q = gen::gaussian(rng, 2);
        const double h = 1e-3;
        for (int d = 0; d < 2; ++d) {
            VectorXd e = VectorXd::Zero(2);
            e[d] = h;
            const double second = hamiltonian_h2(s, 0.0, x, u, v + e, p, q) - 2.0 * hamiltonian_h2(s, 0.0, x, u, v, p, q) +
                                  hamiltonian_h2(s, 0.0, x, u, v - e, p, q);
            CHECK(second / (h * h) > 1e-9);
        }
    }
}

TEST_CASE("leader Hamiltonian") {
    const GameSpec s = fixtures::scalar();
    const VectorXd z = s1(0.0);
    CHECK(hamiltonian_h1(s, 0.0, z, z, z, z, z, z, z) == 0.0);

    std::mt19937_64 rng(12);
    for (int k = 0; k < 100; ++k) {
        const double u = gen::gaussian(rng, 1)[0], x = gen::gaussian(rng, 1)[0], kk = gen::gaussian(rng, 1)[0];
        const double p1 = gen::gaussian(rng, 1)[0], p2 = gen::gaussian(rng, 1)[0];
        const double q1 = gen::gaussian(rng, 1)[0], q2 = gen::gaussian(rng, 1)[0];
        const auto& c = s.pieces[0];
        const double A = c.A(0, 0), B1 = c.B1(0, 0), B2 = c.B2(0, 0), C = c.C(0, 0), D1 = c.D1(0, 0),
                     D2 = c.D2(0, 0);
        const double v = -(B2 * p2 + D2 * q2) / c.R2(0, 0);
        const double expect = p1 * (A * x + B1 * u + B2 * v) + q1 * (C * x + D1 * u + D2 * v) +
                              0.5 * (c.Q1(0, 0) * x * x + c.R1(0, 0) * u * u) -
                              kk * (A * p2 + C * q2 + c.Q2(0, 0) * x);
        CHECK(hamiltonian_h1(s, 0.0, s1(u), s1(x), s1(kk), s1(p1), s1(p2), s1(q1), s1(q2)) ==
              doctest::Approx(expect).epsilon(1e-13));

        // k = 0: single-player Hamiltonian with the follower response held fixed
        const double single = p1 * (A * x + B1 * u + B2 * v) + q1 * (C * x + D1 * u + D2 * v) +
                              0.5 * (c.Q1(0, 0) * x * x + c.R1(0, 0) * u * u);
        CHECK(hamiltonian_h1(s, 0.0, s1(u), s1(x), z, s1(p1), s1(p2), s1(q1), s1(q2)) ==
              doctest::Approx(single).epsilon(1e-13));
    }
}

TEST_CASE("leader Hamiltonian uses the constrained follower response") {
    GameSpec s = fixtures::scalar();
    s.gamma2 = ConstraintSet::interval(-0.1, 0.1);
    const VectorXd p2 = s1(5.0), q2 = s1(0.0), z = s1(0.0);
    const VectorXd v = phi2(s, 0.0, p2, q2);
    CHECK(v[0] == -0.1);
    const double expect = 1.0 * (0.3 * v[0]) + 0.0;
    CHECK(hamiltonian_h1(s, 0.0, z, z, z, s1(1.0), p2, z, q2) == doctest::Approx(expect).epsilon(1e-14));
}
