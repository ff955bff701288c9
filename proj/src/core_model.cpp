#include "stackgame/core_model.hpp"

#include <algorithm>
#include <cmath>

#include "stackgame/errors.hpp"

namespace stackgame {

namespace {

void expect_shape(const Eigen::MatrixXd& M, int r, int c, const std::string& name) {
    if (M.rows() != r || M.cols() != c)
        throw MalformedSpec(name + " must be " + std::to_string(r) + "x" + std::to_string(c) + ", got " +
                            std::to_string(M.rows()) + "x" + std::to_string(M.cols()));
    if (!M.allFinite())
        throw MalformedSpec(name + " has non-finite entries");
}

double asymmetry(const Eigen::MatrixXd& M) { return (M - M.transpose()).cwiseAbs().maxCoeff(); }

double min_eig(const Eigen::MatrixXd& M) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (M + M.transpose()), Eigen::EigenvaluesOnly);
    return es.eigenvalues().minCoeff();
}

}  // namespace

bool Coefficients::operator==(const Coefficients& o) const {
    return A == o.A && B1 == o.B1 && B2 == o.B2 && C == o.C && D1 == o.D1 && D2 == o.D2 && Q1 == o.Q1 &&
           Q2 == o.Q2 && R1 == o.R1 && R2 == o.R2;
}

const Coefficients& GameSpec::at(double t) const {
    auto it = std::upper_bound(breakpoints.begin(), breakpoints.end(), t);
    std::size_t k = it == breakpoints.begin() ? 0 : static_cast<std::size_t>(it - breakpoints.begin()) - 1;
    return pieces[std::min(k, pieces.size() - 1)];
}

void GameSpec::check_dimensions() const {
    if (n < 1 || m1 < 1 || m2 < 1)
        throw MalformedSpec("dimensions must be positive");
    if (!(T > 0.0) || !std::isfinite(T))
        throw MalformedSpec("horizon must be positive and finite");
    if (x0.size() != n || !x0.allFinite())
        throw MalformedSpec("x0 must have length n");
    if (breakpoints.empty() || breakpoints.size() != pieces.size())
        throw MalformedSpec("breakpoint grid and coefficient pieces differ in length");
    if (breakpoints.front() != 0.0)
        throw MalformedSpec("first breakpoint must be t_from = 0");
    for (std::size_t k = 1; k < breakpoints.size(); ++k)
        if (!(breakpoints[k] > breakpoints[k - 1]) || !(breakpoints[k] < T))
            throw MalformedSpec("breakpoints must be increasing and inside [0, T)");
    for (const auto& c : pieces) {
        expect_shape(c.A, n, n, "A");
        expect_shape(c.C, n, n, "C");
        expect_shape(c.B1, n, m1, "B1");
        expect_shape(c.D1, n, m1, "D1");
        expect_shape(c.B2, n, m2, "B2");
        expect_shape(c.D2, n, m2, "D2");
        expect_shape(c.Q1, n, n, "Q1");
        expect_shape(c.Q2, n, n, "Q2");
        expect_shape(c.R1, m1, m1, "R1");
        expect_shape(c.R2, m2, m2, "R2");
    }
    expect_shape(Phi1, n, n, "Phi1");
    expect_shape(Phi2, n, n, "Phi2");
    if (gamma1.dim() != m1)
        throw MalformedSpec("Gamma1 dimension must equal m1");
    if (gamma2.dim() != m2)
        throw MalformedSpec("Gamma2 dimension must equal m2");
}

bool GameSpec::operator==(const GameSpec& o) const {
    return n == o.n && m1 == o.m1 && m2 == o.m2 && T == o.T && x0 == o.x0 && breakpoints == o.breakpoints &&
           pieces == o.pieces && Phi1 == o.Phi1 && Phi2 == o.Phi2 && gamma1 == o.gamma1 && gamma2 == o.gamma2;
}

GameSpec GameSpec::constant(const Coefficients& c, double T, Eigen::VectorXd x0, Eigen::MatrixXd Phi1,
                            Eigen::MatrixXd Phi2, ConstraintSet g1, ConstraintSet g2) {
    GameSpec s;
    s.n = static_cast<int>(c.A.rows());
    s.m1 = static_cast<int>(c.B1.cols());
    s.m2 = static_cast<int>(c.B2.cols());
    s.T = T;
    s.x0 = std::move(x0);
    s.breakpoints = {0.0};
    s.pieces = {c};
    s.Phi1 = std::move(Phi1);
    s.Phi2 = std::move(Phi2);
    s.gamma1 = std::move(g1);
    s.gamma2 = std::move(g2);
    s.check_dimensions();
    return s;
}

GameSpec GameSpec::scalar(double A, double B1, double B2, double C, double D1, double D2, double Q1, double Q2,
                          double R1, double R2, double Phi1, double Phi2, double T, double x0) {
    auto m = [](double v) { return Eigen::MatrixXd::Constant(1, 1, v); };
    Coefficients c{m(A), m(B1), m(B2), m(C), m(D1), m(D2), m(Q1), m(Q2), m(R1), m(R2)};
    return constant(c, T, Eigen::VectorXd::Constant(1, x0), m(Phi1), m(Phi2), ConstraintSet::full(1),
                    ConstraintSet::full(1));
}

bool ValidationReport::pass() const {
    return std::all_of(checks.begin(), checks.end(), [](const CheckResult& c) { return c.pass; });
}

const CheckResult* ValidationReport::find(const std::string& prefix) const {
    for (const auto& c : checks)
        if (c.name.rfind(prefix, 0) == 0 && !c.pass)
            return &c;
    for (const auto& c : checks)
        if (c.name.rfind(prefix, 0) == 0)
            return &c;
    return nullptr;
}

ValidationReport validate_spec(const GameSpec& spec, double delta_R) {
    spec.check_dimensions();
    ValidationReport rep;
    auto psd = [&](const Eigen::MatrixXd& M, const std::string& name, const std::string& where) {
        const double asym = asymmetry(M);
        rep.checks.push_back({"symmetry " + name + where, asym <= 1e-12, asym});
        const double lmin = min_eig(M);
        rep.checks.push_back({"nonnegativity " + name + where, lmin >= -1e-10, lmin});
    };
    auto pd = [&](const Eigen::MatrixXd& M, const std::string& name, const std::string& where) {
        const double asym = asymmetry(M);
        rep.checks.push_back({"symmetry " + name + where, asym <= 1e-12, asym});
        const double lmin = min_eig(M);
        rep.checks.push_back({"uniform positivity " + name + where, lmin >= delta_R, lmin});
    };
    for (std::size_t k = 0; k < spec.pieces.size(); ++k) {
        const std::string where = " @t=" + std::to_string(spec.breakpoints[k]);
        const auto& c = spec.pieces[k];
        psd(c.Q1, "Q1", where);
        psd(c.Q2, "Q2", where);
        pd(c.R1, "R1", where);
        pd(c.R2, "R2", where);
    }
    psd(spec.Phi1, "Phi1", "");
    psd(spec.Phi2, "Phi2", "");
    return rep;
}

double hamiltonian_h2(const GameSpec& spec, double t, const Eigen::VectorXd& x, const Eigen::VectorXd& u,
                      const Eigen::VectorXd& v, const Eigen::VectorXd& p2, const Eigen::VectorXd& q2) {
    const auto& c = spec.at(t);
    return p2.dot(c.A * x + c.B1 * u + c.B2 * v) + q2.dot(c.C * x + c.D1 * u + c.D2 * v) +
           0.5 * (x.dot(c.Q2 * x) + v.dot(c.R2 * v));
}

double hamiltonian_h1(const GameSpec& spec, double t, const Eigen::VectorXd& u, const Eigen::VectorXd& x,
                      const Eigen::VectorXd& k, const Eigen::VectorXd& p1, const Eigen::VectorXd& p2,
                      const Eigen::VectorXd& q1, const Eigen::VectorXd& q2) {
    const auto& c = spec.at(t);
    const Eigen::VectorXd v = phi2(spec, t, p2, q2);
    return p1.dot(c.A * x + c.B1 * u + c.B2 * v) + q1.dot(c.C * x + c.D1 * u + c.D2 * v) +
           0.5 * (x.dot(c.Q1 * x) + u.dot(c.R1 * u)) - k.dot(c.A.transpose() * p2 + c.C.transpose() * q2 + c.Q2 * x);
}

}  // namespace stackgame
