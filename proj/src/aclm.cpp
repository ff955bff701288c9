#include "stackgame/aclm.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "stackgame/errors.hpp"

namespace stackgame {

namespace {

struct Scalars {
    double A, B1, B2, C, D1, D2, Q1, Q2, R1, R2;
};

Scalars scalars(const GameSpec& spec, double t) {
    const auto& c = spec.at(t);
    return {c.A(0, 0),  c.B1(0, 0), c.B2(0, 0), c.C(0, 0),  c.D1(0, 0),
            c.D2(0, 0), c.Q1(0, 0), c.Q2(0, 0), c.R1(0, 0), c.R2(0, 0)};
}

int sgn(double v) { return (v > 0) - (v < 0); }

double& val(NodeProcess& p, int i, int j) { return p.layer(i)(0, j); }
double val(const NodeProcess& p, int i, int j) { return p.layer(i)(0, j); }

void check_scalar(const GameSpec& spec, const Lattice& lat) {
    spec.check_dimensions();
    if (spec.n != 1 || spec.m1 != 1 || spec.m2 != 1)
        throw std::invalid_argument("ACLM solver handles scalar games only");
    if (!spec.gamma2.is_full())
        throw std::invalid_argument("ACLM solver needs an unconstrained follower");
    if (lat.layout() != Layout::Full)
        throw std::invalid_argument("ACLM solver needs the full (non-recombining) tree");
}

struct NodeSolve {
    double bt, d1, gt, d2;
};

/// Solves the one-step matching conditions for (beta_t, Delta1, gamma_t, Delta2).
NodeSolve solve_node(const Scalars& s, double dt, double bbar, double b2, double gbar, double g2) {
    const Eigen::Vector4d av(-s.B1 * s.B1 / s.R1, -s.B1 * s.D1 / s.R1, -s.B2 * s.B2 / s.R2, -s.B2 * s.D2 / s.R2);
    const Eigen::Vector4d cv(-s.D1 * s.B1 / s.R1, -s.D1 * s.D1 / s.R1, -s.D2 * s.B2 / s.R2, -s.D2 * s.D2 / s.R2);
    Eigen::Matrix4d M = Eigen::Matrix4d::Identity();
    Eigen::Vector4d rhs;
    M.row(0) -= dt * (bbar * av + b2 * cv).transpose();
    rhs(0) = bbar + dt * (bbar * s.A + b2 * s.C);
    M.row(1) -= (b2 * dt * av + bbar * cv).transpose();
    rhs(1) = b2 * (1 + s.A * dt) + bbar * s.C;
    M.row(2) -= dt * (gbar * av + g2 * cv).transpose();
    rhs(2) = gbar + dt * (gbar * s.A + g2 * s.C);
    M.row(3) -= (g2 * dt * av + gbar * cv).transpose();
    rhs(3) = g2 * (1 + s.A * dt) + gbar * s.C;
    Eigen::FullPivLU<Eigen::Matrix4d> lu(M);
    if (!lu.isInvertible() || std::abs(lu.determinant()) < 1e-12)
        throw SingularMatrix("ACLM node system is singular");
    const Eigen::Vector4d z = lu.solve(rhs);
    return {z(0), z(1), z(2), z(3)};
}

class AclmEngine {
public:
    AclmEngine(const GameSpec& spec, const Lattice& lat, double K) : spec_(spec), lat_(lat), K_(K) {
        check_scalar(spec, lat);
        if (!(K > 0))
            throw std::invalid_argument("ACLM gain bound K must be positive");
        for (int i = 0; i < lat.N(); ++i)
            coef_.push_back(scalars(spec, lat.time(i)));
        phi1_ = spec.Phi1(0, 0);
        phi2_ = spec.Phi2(0, 0);
    }

    AclmSolution blank() const {
        AclmSolution s;
        s.K = K_;
        for (NodeProcess* p : {&s.alpha, &s.beta, &s.gamma, &s.xstar, &s.alpha2, &s.beta2, &s.gamma2, &s.beta_t,
                               &s.gamma_t, &s.delta1, &s.delta2, &s.xi1, &s.xi2, &s.sigma, &s.u2, &s.u1, &s.F,
                               &s.G})
            *p = NodeProcess(lat_, 1);
        return s;
    }

    /// Backward sweep given alpha; sigma_prev holds the relaxed switching function of the last iterate.
    void backward(AclmSolution& s, const NodeProcess& sigma_prev, double keep, bool first) const {
        const int n = lat_.N();
        const double dt = lat_.dt();
        for (int j = 0; j < lat_.nodes(n); ++j) {
            val(s.beta, n, j) = phi1_ - phi2_ * val(s.alpha, n, j);
            val(s.gamma, n, j) = phi2_;
        }
        for (int i = n - 1; i >= 0; --i) {
            const auto& c = coef_[i];
            const Eigen::MatrixXd bbar = conditional_expectation(s.beta, lat_, i);
            const Eigen::MatrixXd b2 = martingale_integrand(s.beta, lat_, i);
            const Eigen::MatrixXd gbar = conditional_expectation(s.gamma, lat_, i);
            const Eigen::MatrixXd g2 = martingale_integrand(s.gamma, lat_, i);
            for (int j = 0; j < lat_.nodes(i); ++j) {
                const NodeSolve z = solve_node(c, dt, bbar(0, j), b2(0, j), gbar(0, j), g2(0, j));
                const double a = val(s.alpha, i, j);
                const double sig = a * (c.B1 * z.gt + c.D1 * z.d2);
                const double relaxed = first ? sig : keep * val(sigma_prev, i, j) + (1 - keep) * sig;
                const double u2 = K_ * sgn(relaxed);
                val(s.sigma, i, j) = relaxed;
                val(s.u2, i, j) = u2;
                val(s.beta_t, i, j) = z.bt;
                val(s.gamma_t, i, j) = z.gt;
                val(s.delta1, i, j) = z.d1;
                val(s.delta2, i, j) = z.d2;
                val(s.beta2, i, j) = b2(0, j);
                val(s.gamma2, i, j) = g2(0, j);
                val(s.F, i, j) = -(c.B1 * z.bt + c.D1 * z.d1) / c.R1;
                val(s.G, i, j) = -(c.B2 * z.gt + c.D2 * z.d2) / c.R2;
                val(s.beta, i, j) = z.bt + (c.A * z.bt + c.C * z.d1 - c.Q2 * a + c.Q1) * dt;
                val(s.gamma, i, j) =
                    z.gt + ((c.A + c.B1 * u2) * z.gt + (c.C + c.D1 * u2) * z.d2 + c.Q2) * dt;
            }
        }
    }

    /// Forward sweep for alpha and the reference path.
    void forward(AclmSolution& s) const {
        const double dt = lat_.dt(), sq = lat_.sqrt_dt();
        val(s.alpha, 0, 0) = 0.0;
        val(s.xstar, 0, 0) = spec_.x0(0);
        for (int i = 0; i < lat_.N(); ++i) {
            const auto& c = coef_[i];
            for (int j = 0; j < lat_.nodes(i); ++j) {
                const double a = val(s.alpha, i, j), u2 = val(s.u2, i, j);
                const double bt = val(s.beta_t, i, j), d1 = val(s.delta1, i, j);
                const double F = val(s.F, i, j), G = val(s.G, i, j);
                const double ax = c.A + c.B1 * F + c.B2 * G;
                const double cx = c.C + c.D1 * F + c.D2 * G;
                const double m = (c.A + c.B1 * u2) * a + c.B2 * c.B2 / c.R2 * bt + c.D2 * c.B2 / c.R2 * d1;
                const double v = (c.C + c.D1 * u2) * a + c.B2 * c.D2 / c.R2 * bt + c.D2 * c.D2 / c.R2 * d1;
                const double dn = 1 + ax * dt - cx * sq, up = 1 + ax * dt + cx * sq;
                if (std::abs(dn) < 1e-12 || std::abs(up) < 1e-12)
                    throw SingularMatrix("ACLM reference state hits zero; refine the lattice");
                const int jd = lat_.down(i, j), ju = lat_.up(i, j);
                val(s.alpha, i + 1, jd) = (a + m * dt - v * sq) / dn;
                val(s.alpha, i + 1, ju) = (a + m * dt + v * sq) / up;
                const double x = val(s.xstar, i, j);
                val(s.xstar, i + 1, jd) = x * dn;
                val(s.xstar, i + 1, ju) = x * up;
                val(s.u1, i, j) = (F - u2) * x;
            }
        }
    }

    /// Derived quantities and identity residuals of a converged iterate.
    void finalize(AclmSolution& s) const {
        const double dt = lat_.dt();
        double dres = 0.0, ares = 0.0;
        for (int i = 0; i < lat_.N(); ++i) {
            const auto& c = coef_[i];
            const Eigen::MatrixXd bbar = conditional_expectation(s.beta, lat_, i);
            const Eigen::MatrixXd gbar = conditional_expectation(s.gamma, lat_, i);
            const Eigen::MatrixXd abar = conditional_expectation(s.alpha, lat_, i);
            const Eigen::MatrixXd a2 = martingale_integrand(s.alpha, lat_, i);
            for (int j = 0; j < lat_.nodes(i); ++j) {
                const double bb = bbar(0, j), gb = gbar(0, j);
                const double bt = val(s.beta_t, i, j), gt = val(s.gamma_t, i, j);
                const double d1 = val(s.delta1, i, j), d2 = val(s.delta2, i, j);
                const double ax = c.A + c.B1 * val(s.F, i, j) + c.B2 * val(s.G, i, j);
                const double cx = c.C + c.D1 * val(s.F, i, j) + c.D2 * val(s.G, i, j);
                const double xi1 = bb * c.C - bb * c.D1 * c.B1 / c.R1 * bt - bb * c.D2 * c.B2 / c.R2 * gt +
                                   val(s.beta2, i, j) * (1 + ax * dt);
                const double xi2 = gb * c.C - gb * c.D1 * c.B1 / c.R1 * bt - gb * c.D2 * c.B2 / c.R2 * gt +
                                   val(s.gamma2, i, j) * (1 + ax * dt);
                val(s.xi1, i, j) = xi1;
                val(s.xi2, i, j) = xi2;
                const double m11 = 1 + bb * c.D1 * c.D1 / c.R1, m12 = bb * c.D2 * c.D2 / c.R2;
                const double m21 = gb * c.D1 * c.D1 / c.R1, m22 = 1 + gb * c.D2 * c.D2 / c.R2;
                if (std::abs(m11 * m22 - m12 * m21) < 1e-12)
                    throw SingularMatrix("ACLM Delta system is singular");
                dres = std::max({dres, std::abs(m11 * d1 + m12 * d2 - xi1), std::abs(m21 * d1 + m22 * d2 - xi2)});
                val(s.alpha2, i, j) = a2(0, j);
                const double u2 = val(s.u2, i, j), a = val(s.alpha, i, j);
                const double v = (c.C + c.D1 * u2) * a + c.B2 * c.D2 / c.R2 * bt + c.D2 * c.D2 / c.R2 * d1;
                ares = std::max(ares, std::abs(a2(0, j) * (1 + ax * dt) + abar(0, j) * cx - v));
            }
        }
        s.delta_residual = dres;
        s.alpha2_residual = ares;
    }

private:
    const GameSpec& spec_;
    const Lattice& lat_;
    double K_;
    std::vector<Scalars> coef_;
    double phi1_ = 0.0, phi2_ = 0.0;
};

}  // namespace

AclmSolution solve_aclm(const GameSpec& spec, const Lattice& lattice, double K, const AclmSettings& settings) {
    AclmEngine eng(spec, lattice, K);
    AclmSolution s = eng.blank();
    const int n = lattice.N();
    eng.backward(s, s.sigma, settings.relaxation, true);
    eng.forward(s);
    for (int it = 1; it <= settings.max_iter; ++it) {
        const AclmSolution prev = s;
        eng.backward(s, prev.sigma, settings.relaxation, false);
        eng.forward(s);
        const double d = std::max({s.alpha.sup_distance(prev.alpha), s.beta.sup_distance(prev.beta),
                                   s.gamma.sup_distance(prev.gamma), s.u2.sup_distance(prev.u2, 0, n - 1)});
        s.history.push_back(d);
        if (!std::isfinite(d) || d > 1e12)
            throw NotConverged("ACLM iteration diverged at iteration " + std::to_string(it), s.history);
        if (d <= settings.tol) {
            s.iterations = it;
            eng.finalize(s);
            s.residual = reconstruct_hamiltonian(spec, lattice, s).residual;
            return s;
        }
    }
    throw NotConverged("ACLM iteration did not reach tolerance within " + std::to_string(settings.max_iter) +
                           " iterations",
                       s.history);
}

double leader_strategy(const AclmSolution& sol, int i, int j, double x) {
    const double u2 = val(sol.u2, i, j), xs = val(sol.xstar, i, j);
    return u2 * x - u2 * xs + val(sol.F, i, j) * xs;
}

AffineCoefficients leader_strategy_mean(const AclmSolution& sol, const Lattice& lattice, int i) {
    return {layer_mean(sol.u2.layer(i), lattice, i)(0), layer_mean(sol.u1.layer(i), lattice, i)(0)};
}

Reconstruction reconstruct_hamiltonian(const GameSpec& spec, const Lattice& lat, const AclmSolution& sol) {
    check_scalar(spec, lat);
    const int n = lat.N();
    const double dt = lat.dt(), sq = lat.sqrt_dt();
    Reconstruction r;
    for (NodeProcess* p : {&r.x, &r.chi, &r.p1, &r.p2, &r.q1, &r.q2})
        *p = NodeProcess(lat, 1);
    for (int i = 0; i <= n; ++i) {
        r.x.layer(i) = sol.xstar.layer(i);
        r.chi.layer(i) = sol.alpha.layer(i).cwiseProduct(r.x.layer(i));
        r.p1.layer(i) = sol.beta.layer(i).cwiseProduct(r.x.layer(i));
        r.p2.layer(i) = sol.gamma.layer(i).cwiseProduct(r.x.layer(i));
    }
    double worst = 0.0;
    auto note = [&](double res, const char* what) {
        if (!(res <= worst)) {
            worst = res;
            r.worst = what;
        }
    };
    note(std::abs(val(r.x, 0, 0) - spec.x0(0)), "x(0)");
    note(std::abs(val(r.chi, 0, 0)), "chi(0)");
    const double phi1 = spec.Phi1(0, 0), phi2 = spec.Phi2(0, 0);
    for (int j = 0; j < lat.nodes(n); ++j) {
        const double x = val(r.x, n, j);
        note(std::abs(val(r.p1, n, j) - (phi1 * x - phi2 * val(r.chi, n, j))), "p1(T)");
        note(std::abs(val(r.p2, n, j) - phi2 * x), "p2(T)");
    }
    for (int i = 0; i < n; ++i) {
        const Scalars c = scalars(spec, lat.time(i));
        const Eigen::MatrixXd P1 = conditional_expectation(r.p1, lat, i), Z1 = martingale_integrand(r.p1, lat, i);
        const Eigen::MatrixXd P2 = conditional_expectation(r.p2, lat, i), Z2 = martingale_integrand(r.p2, lat, i);
        for (int j = 0; j < lat.nodes(i); ++j) {
            const double x = val(r.x, i, j), chi = val(r.chi, i, j);
            const double p1 = P1(0, j), q1 = Z1(0, j), p2 = P2(0, j), q2 = Z2(0, j);
            val(r.q1, i, j) = q1;
            val(r.q2, i, j) = q2;
            note(std::abs(q1 - val(sol.delta1, i, j) * x), "q1 = Delta1 x");
            note(std::abs(q2 - val(sol.delta2, i, j) * x), "q2 = Delta2 x");
            const double u = -(c.B1 * p1 + c.D1 * q1) / c.R1;
            const double v = -(c.B2 * p2 + c.D2 * q2) / c.R2;
            const double u2 = sol.K * sgn(chi * (c.B1 * p2 + c.D1 * q2));
            note(std::abs(u2 - val(sol.u2, i, j)), "u2 bang-bang");
            const double bx = c.A * x + c.B1 * u + c.B2 * v, sx = c.C * x + c.D1 * u + c.D2 * v;
            const double bc = (c.A + c.B1 * u2) * chi + c.B2 * c.B2 / c.R2 * p1 + c.D2 * c.B2 / c.R2 * q1;
            const double sc = (c.C + c.D1 * u2) * chi + c.B2 * c.D2 / c.R2 * p1 + c.D2 * c.D2 / c.R2 * q1;
            const int jd = lat.down(i, j), ju = lat.up(i, j);
            note(std::abs(val(r.x, i + 1, jd) - (x + bx * dt - sx * sq)), "x dynamics");
            note(std::abs(val(r.x, i + 1, ju) - (x + bx * dt + sx * sq)), "x dynamics");
            note(std::abs(val(r.chi, i + 1, jd) - (chi + bc * dt - sc * sq)), "chi dynamics");
            note(std::abs(val(r.chi, i + 1, ju) - (chi + bc * dt + sc * sq)), "chi dynamics");
            note(std::abs(val(r.p1, i, j) - (p1 + (c.A * p1 + c.C * q1 - c.Q2 * chi + c.Q1 * x) * dt)), "p1 dynamics");
            note(std::abs(val(r.p2, i, j) -
                          (p2 + ((c.A + c.B1 * u2) * p2 + (c.C + c.D1 * u2) * q2 + c.Q2 * x) * dt)),
                 "p2 dynamics");
        }
    }
    r.residual = worst;
    return r;
}

H3Report h3_stationarity_check(const GameSpec& spec, const Lattice& lat, const AclmSolution& sol,
                               const NodeProcess* u1) {
    const Reconstruction rec = reconstruct_hamiltonian(spec, lat, sol);
    const NodeProcess& U1 = u1 ? *u1 : sol.u1;
    H3Report rep;
    rep.du1 = NodeProcess(lat, 1);
    for (int i = 0; i < lat.N(); ++i) {
        const Scalars c = scalars(spec, lat.time(i));
        const Eigen::MatrixXd P1 = conditional_expectation(rec.p1, lat, i);
        const Eigen::MatrixXd P2 = conditional_expectation(rec.p2, lat, i);
        for (int j = 0; j < lat.nodes(i); ++j) {
            const double x = val(rec.x, i, j), u2 = val(sol.u2, i, j);
            const double r = std::abs(c.B1 * P1(0, j) + c.D1 * val(rec.q1, i, j) + c.R1 * (u2 * x + val(U1, i, j)));
            val(rep.du1, i, j) = r;
            rep.max_du1 = std::max(rep.max_du1, r);
            const double sw = val(rec.chi, i, j) * (c.B1 * P2(0, j) + c.D1 * val(rec.q2, i, j));
            if (sw == 0.0)
                ++rep.zero_switches;
            if (u2 != sol.K * sgn(sw))
                ++rep.sign_mismatches;
            rep.max_abs_u2 = std::max(rep.max_abs_u2, std::abs(u2));
        }
    }
    return rep;
}

}  // namespace stackgame
