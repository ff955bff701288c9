#include "stackgame/fbsde.hpp"

#include <cmath>
#include <limits>
#include <random>

#include "stackgame/errors.hpp"

namespace stackgame {

namespace {

using Mat = Eigen::MatrixXd;
using Strided = Eigen::Map<Mat, 0, Eigen::OuterStride<>>;

struct LayerCoef {
    Mat A, B1, B2, C, D1, D2, Q1, Q2, R1inv, R2inv, B2R2inv, D2R2inv;
    WeightedMetric W1, W2;
};

std::vector<LayerCoef> layer_coefficients(const GameSpec& spec, const Lattice& lat) {
    std::vector<LayerCoef> out;
    out.reserve(lat.N());
    for (int i = 0; i < lat.N(); ++i) {
        const auto& c = spec.at(lat.time(i));
        WeightedMetric W1(c.R1), W2(c.R2);
        out.push_back({c.A, c.B1, c.B2, c.C, c.D1, c.D2, c.Q1, c.Q2, W1.R_inv(), W2.R_inv(), c.B2 * W2.R_inv(),
                       c.D2 * W2.R_inv(), W1, W2});
    }
    return out;
}

void scatter(Mat& next, const Mat& down, const Mat& up) {
    const auto rows = next.rows();
    const auto cols = down.cols();
    Strided(next.data(), rows, cols, Eigen::OuterStride<>(2 * rows)) = down;
    Strided(next.data() + rows, rows, cols, Eigen::OuterStride<>(2 * rows)) = up;
}

void require_full(const Lattice& lat) {
    if (lat.layout() != Layout::Full)
        throw std::invalid_argument("path-dependent solvers need the full (non-recombining) tree");
}

struct Controls {
    NodeProcess u, v, g;
};

struct Explicit {
    std::vector<Mat> bx, sx, f2, bk, sk, f1;
    Mat term2, term1;
};

double controls_distance(const Controls& a, const Controls& b, int last) {
    return std::max({a.u.sup_distance(b.u, 0, last), a.v.sup_distance(b.v, 0, last),
                     a.g.sup_distance(b.g, 0, last)});
}

class Engine {
public:
    Engine(const GameSpec& spec, const Lattice& lat, System sys, const NodeProcess* src)
        : spec_(spec), lat_(lat), sys_(sys), src_(src), coef_(layer_coefficients(spec, lat)) {
        require_full(lat);
        spec.check_dimensions();
        if (sys == System::Follower) {
            if (!src || src->dim() != spec.m1 || src->layers() != lat.N() + 1)
                throw std::invalid_argument("follower system needs leader controls of dimension m1 on the lattice");
        }
    }

    bool leader() const { return sys_ == System::Leader; }
    int N() const { return lat_.N(); }

    FbsdeSolution blank() const {
        FbsdeSolution s;
        s.system = sys_;
        s.x = NodeProcess(lat_, spec_.n);
        s.k = NodeProcess(lat_, spec_.n);
        s.p1 = NodeProcess(lat_, spec_.n);
        s.p2 = NodeProcess(lat_, spec_.n);
        s.q1 = NodeProcess(lat_, spec_.n);
        s.q2 = NodeProcess(lat_, spec_.n);
        s.p1bar = NodeProcess(lat_, spec_.n);
        s.p2bar = NodeProcess(lat_, spec_.n);
        s.u = leader() ? NodeProcess(lat_, spec_.m1) : *src_;
        s.v = NodeProcess(lat_, spec_.m2);
        return s;
    }

    Controls zero_controls() const {
        return {leader() ? NodeProcess(lat_, spec_.m1) : *src_, NodeProcess(lat_, spec_.m2),
                NodeProcess(lat_, spec_.m2)};
    }

    Controls controls_of(const FbsdeSolution& y) const {
        Controls c{y.u, y.v, NodeProcess(lat_, spec_.m2)};
        if (leader())
            for (int i = 0; i < N(); ++i)
                c.g.layer(i) = coef_[i].B2.transpose() * y.p1bar.layer(i) + coef_[i].D2.transpose() * y.q1.layer(i);
        return c;
    }

    /// One forward/backward pass of the system scaled by alpha, with the delta part frozen in ex.
    void sweep(double alpha, double delta, const Explicit* ex, const Controls& lag, FbsdeSolution& Y,
               Controls& fresh) const {
        const double dt = lat_.dt(), s = lat_.sqrt_dt();
        const int n = N();
        fresh.u = lag.u;
        fresh.v = NodeProcess(lat_, spec_.m2);
        fresh.g = NodeProcess(lat_, spec_.m2);

        Y.x.layer(0) = spec_.x0;
        for (int i = 0; i < n; ++i) {
            const auto& c = coef_[i];
            const Mat& X = Y.x.layer(i);
            Mat b = alpha * (c.A * X + c.B2 * lag.v.layer(i));
            Mat sg = alpha * (c.C * X + c.D2 * lag.v.layer(i));
            if (leader()) {
                b += alpha * (c.B1 * lag.u.layer(i));
                sg += alpha * (c.D1 * lag.u.layer(i));
            } else {
                b += c.B1 * src_->layer(i);
                sg += c.D1 * src_->layer(i);
            }
            if (ex) {
                b += delta * ex->bx[i];
                sg += delta * ex->sx[i];
            }
            const Mat drift = X + dt * b;
            scatter(Y.x.layer(i + 1), drift - s * sg, drift + s * sg);
        }

        std::vector<Mat> pre_v(n);
        Y.p2.layer(n) = alpha * (spec_.Phi2 * Y.x.layer(n));
        if (ex)
            Y.p2.layer(n) += delta * ex->term2;
        for (int i = n - 1; i >= 0; --i) {
            const auto& c = coef_[i];
            Mat P = conditional_expectation(Y.p2, lat_, i);
            Mat Q = martingale_integrand(Y.p2, lat_, i);
            Mat f = alpha * (c.A.transpose() * P + c.C.transpose() * Q + c.Q2 * Y.x.layer(i));
            if (ex)
                f += delta * ex->f2[i];
            Y.p2.layer(i) = P + dt * f;
            pre_v[i] = -c.R2inv * (c.B2.transpose() * P + c.D2.transpose() * Q);
            fresh.v.layer(i) = project_columns(spec_.gamma2, c.W2, pre_v[i]);
            Y.p2bar.layer(i) = std::move(P);
            Y.q2.layer(i) = std::move(Q);
        }
        Y.v = fresh.v;
        if (!leader()) {
            Y.u = *src_;
            return;
        }

        Y.k.layer(0).setZero();
        for (int i = 0; i < n; ++i) {
            const auto& c = coef_[i];
            const Mat& K = Y.k.layer(i);
            const Mat Jg = jacobian_transpose_apply(spec_.gamma2, c.W2, pre_v[i], lag.g.layer(i));
            Mat b = alpha * (c.A * K + c.B2R2inv * Jg);
            Mat sg = alpha * (c.C * K + c.D2R2inv * Jg);
            if (ex) {
                b += delta * ex->bk[i];
                sg += delta * ex->sk[i];
            }
            const Mat drift = K + dt * b;
            scatter(Y.k.layer(i + 1), drift - s * sg, drift + s * sg);
        }

        Y.p1.layer(n) = alpha * (spec_.Phi1 * Y.x.layer(n) - spec_.Phi2 * Y.k.layer(n));
        if (ex)
            Y.p1.layer(n) += delta * ex->term1;
        for (int i = n - 1; i >= 0; --i) {
            const auto& c = coef_[i];
            Mat P = conditional_expectation(Y.p1, lat_, i);
            Mat Q = martingale_integrand(Y.p1, lat_, i);
            Mat f = alpha * (c.A.transpose() * P + c.C.transpose() * Q + c.Q1 * Y.x.layer(i) - c.Q2 * Y.k.layer(i));
            if (ex)
                f += delta * ex->f1[i];
            Y.p1.layer(i) = P + dt * f;
            const Mat pre_u = -c.R1inv * (c.B1.transpose() * P + c.D1.transpose() * Q);
            fresh.u.layer(i) = project_columns(spec_.gamma1, c.W1, pre_u);
            fresh.g.layer(i) = c.B2.transpose() * P + c.D2.transpose() * Q;
            Y.p1bar.layer(i) = std::move(P);
            Y.q1.layer(i) = std::move(Q);
        }
        Y.u = fresh.u;
    }

    Explicit explicit_terms(const FbsdeSolution& y) const {
        const int n = N();
        Explicit ex;
        ex.bx.resize(n);
        ex.sx.resize(n);
        ex.f2.resize(n);
        for (int i = 0; i < n; ++i) {
            const auto& c = coef_[i];
            const Mat& X = y.x.layer(i);
            ex.bx[i] = c.A * X + c.B2 * y.v.layer(i);
            ex.sx[i] = c.C * X + c.D2 * y.v.layer(i);
            if (leader()) {
                ex.bx[i] += c.B1 * y.u.layer(i);
                ex.sx[i] += c.D1 * y.u.layer(i);
            }
            ex.f2[i] = c.A.transpose() * y.p2bar.layer(i) + c.C.transpose() * y.q2.layer(i) + c.Q2 * X;
        }
        ex.term2 = spec_.Phi2 * y.x.layer(n);
        if (!leader())
            return ex;
        ex.bk.resize(n);
        ex.sk.resize(n);
        ex.f1.resize(n);
        for (int i = 0; i < n; ++i) {
            const auto& c = coef_[i];
            const Mat pre_v = -c.R2inv * (c.B2.transpose() * y.p2bar.layer(i) + c.D2.transpose() * y.q2.layer(i));
            const Mat g = c.B2.transpose() * y.p1bar.layer(i) + c.D2.transpose() * y.q1.layer(i);
            const Mat Jg = jacobian_transpose_apply(spec_.gamma2, c.W2, pre_v, g);
            ex.bk[i] = c.A * y.k.layer(i) + c.B2R2inv * Jg;
            ex.sk[i] = c.C * y.k.layer(i) + c.D2R2inv * Jg;
            ex.f1[i] = c.A.transpose() * y.p1bar.layer(i) + c.C.transpose() * y.q1.layer(i) + c.Q1 * y.x.layer(i) -
                       c.Q2 * y.k.layer(i);
        }
        ex.term1 = spec_.Phi1 * y.x.layer(n) - spec_.Phi2 * y.k.layer(n);
        return ex;
    }

    double distance(const FbsdeSolution& a, const FbsdeSolution& b) const {
        const int last = N() - 1;
        return std::max({a.x.sup_distance(b.x), a.k.sup_distance(b.k), a.p1.sup_distance(b.p1),
                         a.p2.sup_distance(b.p2), a.q1.sup_distance(b.q1, 0, last),
                         a.q2.sup_distance(b.q2, 0, last), a.u.sup_distance(b.u, 0, last),
                         a.v.sup_distance(b.v, 0, last)});
    }

    void finalize(FbsdeSolution& y) const {
        if (spec_.gamma2.is_full())
            return;
        int clamped = 0;
        for (int i = 0; i < N(); ++i) {
            const auto& c = coef_[i];
            const Mat pre_v = -c.R2inv * (c.B2.transpose() * y.p2bar.layer(i) + c.D2.transpose() * y.q2.layer(i));
            clamped += count_clamped(spec_.gamma2, c.W2, pre_v);
        }
        y.clamped_fraction = static_cast<double>(clamped) / lat_.interior_nodes();
        y.clamp_warning = y.clamped_fraction > 0.1;
    }

    struct AlphaResult {
        FbsdeSolution Y;
        int iterations = 0;
        std::vector<double> history;
    };

    /// Solves the alpha-scaled system with frozen explicit part; damped Picard on the controls when damped.
    AlphaResult solve_alpha(double alpha, double delta, const Explicit* ex, Controls lag, double tol, int max_iter,
                            double blowup, bool damped) const {
        AlphaResult r;
        r.Y = blank();
        Controls fresh;
        if (alpha == 0.0) {
            sweep(alpha, delta, ex, lag, r.Y, fresh);
            return r;
        }
        FbsdeSolution prev;
        double omega = 1.0, last = std::numeric_limits<double>::infinity();
        for (int it = 1; it <= max_iter; ++it) {
            sweep(alpha, delta, ex, lag, r.Y, fresh);
            double d = controls_distance(fresh, lag, N() - 1);
            if (it > 1)
                d = std::max(d, distance(r.Y, prev));
            r.history.push_back(d);
            r.iterations = it;
            if (!std::isfinite(d) || d > blowup)
                throw NotConverged("fixed-point iteration diverged at iteration " + std::to_string(it), r.history,
                                   alpha);
            if (d <= tol)
                return r;
            if (damped && d > last)
                omega = std::max(omega * 0.5, 1.0 / 1024.0);
            last = d;
            for (int i = 0; i < N(); ++i) {
                lag.u.layer(i) += omega * (fresh.u.layer(i) - lag.u.layer(i));
                lag.v.layer(i) += omega * (fresh.v.layer(i) - lag.v.layer(i));
                lag.g.layer(i) += omega * (fresh.g.layer(i) - lag.g.layer(i));
            }
            prev = r.Y;
        }
        throw NotConverged("fixed-point iteration did not reach tolerance within " + std::to_string(max_iter) +
                               " iterations",
                           r.history, alpha);
    }

private:
    const GameSpec& spec_;
    const Lattice& lat_;
    System sys_;
    const NodeProcess* src_;
    std::vector<LayerCoef> coef_;
};

FbsdeSolution plain_picard(const Engine& engine, const SolverSettings& settings) {
    auto r = engine.solve_alpha(1.0, 0.0, nullptr, engine.zero_controls(), settings.tol, settings.max_iter,
                                settings.blowup, false);
    r.Y.iterations = r.iterations;
    r.Y.history = r.history;
    r.Y.residual = r.history.empty() ? 0.0 : r.history.back();
    engine.finalize(r.Y);
    return std::move(r.Y);
}

}  // namespace

FbsdeSolution solve_follower(const GameSpec& spec, const Lattice& lattice, const NodeProcess& leader_controls,
                             const SolverSettings& settings) {
    Engine engine(spec, lattice, System::Follower, &leader_controls);
    return plain_picard(engine, settings);
}

FbsdeSolution solve_leader_system(const GameSpec& spec, const Lattice& lattice, const SolverSettings& settings) {
    Engine engine(spec, lattice, System::Leader, nullptr);
    return plain_picard(engine, settings);
}

FbsdeSolution solve_by_continuation(const GameSpec& spec, const Lattice& lattice, System system, int steps,
                                    const NodeProcess* leader_controls, const SolverSettings& settings,
                                    ContinuationReport* report) {
    if (steps < 1)
        throw std::invalid_argument("continuation needs at least one step");
    Engine engine(spec, lattice, system, leader_controls);
    ContinuationReport rep;
    rep.steps = steps;
    const double tol = 0.1 * settings.tol;

    // alpha = 0: decoupled, one sweep
    FbsdeSolution y = engine.solve_alpha(0.0, 0.0, nullptr, engine.zero_controls(), tol, settings.max_iter,
                                         settings.blowup, true)
                          .Y;
    int total = 0;
    const double delta = 1.0 / steps;
    for (int step = 0; step < steps; ++step) {
        const double alpha0 = static_cast<double>(step) / steps;
        std::vector<double> hist;
        int outer = 0;
        for (;;) {
            if (outer >= settings.max_iter)
                throw NotConverged("continuation map did not converge at alpha = " + std::to_string(alpha0 + delta),
                                   hist, alpha0 + delta);
            const Explicit ex = engine.explicit_terms(y);
            auto r = engine.solve_alpha(alpha0, delta, &ex, engine.controls_of(y), tol, settings.max_iter,
                                        settings.blowup, true);
            ++outer;
            total += std::max(1, r.iterations);
            const double d = engine.distance(r.Y, y);
            hist.push_back(d);
            y = std::move(r.Y);
            if (!std::isfinite(d) || d > settings.blowup)
                throw NotConverged("continuation map diverged at alpha = " + std::to_string(alpha0 + delta), hist,
                                   alpha0 + delta);
            if (d <= tol)
                break;
        }
        double ratio = 0.0;
        if (hist.size() >= 3 && hist.front() > 0.0)
            ratio = std::pow(hist[hist.size() - 2] / hist.front(), 1.0 / (hist.size() - 2));
        else if (hist.size() == 2 && hist.front() > 0.0)
            ratio = hist.back() / hist.front();
        rep.alpha.push_back(alpha0 + delta);
        rep.outer_iterations.push_back(outer);
        rep.contraction_ratio.push_back(ratio);
        rep.history.push_back(std::move(hist));
    }

    // defect of the full system at the continuation end point
    FbsdeSolution out = engine.blank();
    Controls fresh;
    engine.sweep(1.0, 0.0, nullptr, engine.controls_of(y), out, fresh);
    const double residual = std::max(engine.distance(out, y), controls_distance(fresh, engine.controls_of(y),
                                                                                 lattice.N() - 1));
    out.iterations = total;
    out.residual = residual;
    for (const auto& h : rep.history)
        out.history.insert(out.history.end(), h.begin(), h.end());
    engine.finalize(out);
    if (report)
        *report = std::move(rep);
    if (!(residual <= settings.tol))
        throw NotConverged("continuation end point misses tolerance", out.history, 1.0);
    return out;
}

MaxPrincipleReport max_principle_residual(const GameSpec& spec, const Lattice& lattice, const FbsdeSolution& sol,
                                          int probes, std::uint64_t seed, double tol) {
    require_full(lattice);
    const auto coef = layer_coefficients(spec, lattice);
    MaxPrincipleReport rep;
    rep.probes = probes;
    rep.tol = tol;
    rep.r_u = NodeProcess(lattice, 1);
    rep.r_v = NodeProcess(lattice, 1);
    rep.vi_u = NodeProcess(lattice, 1);
    rep.vi_v = NodeProcess(lattice, 1);
    std::mt19937_64 rng(seed);
    const bool leader = sol.system == System::Leader;
    for (int i = 0; i < lattice.N(); ++i) {
        const auto& c = coef[i];
        for (int j = 0; j < lattice.nodes(i); ++j) {
            const Eigen::VectorXd P2 = sol.p2bar.at(i, j), Q2 = sol.q2.at(i, j), v = sol.v.at(i, j);
            const Eigen::VectorXd target = project(spec.gamma2, c.W2, -c.R2inv * (c.B2.transpose() * P2 + c.D2.transpose() * Q2));
            rep.r_v.at(i, j)[0] = (v - target).norm();
            const Eigen::VectorXd grad = c.B2.transpose() * P2 + c.D2.transpose() * Q2 + c.W2.R() * v;
            double worst = std::numeric_limits<double>::infinity();
            for (int k = 0; k < probes; ++k) {
                const double val = grad.dot(spec.gamma2.sample(rng) - v);
                worst = std::min(worst, val);
                rep.vi_violations += val < -tol;
            }
            rep.vi_v.at(i, j)[0] = worst;
            rep.max_r_v = std::max(rep.max_r_v, rep.r_v.at(i, j)[0]);
            rep.worst_vi_v = std::min(rep.worst_vi_v, worst);
            if (!leader)
                continue;
            const Eigen::VectorXd P1 = sol.p1bar.at(i, j), Q1 = sol.q1.at(i, j), u = sol.u.at(i, j);
            const Eigen::VectorXd target_u = project(spec.gamma1, c.W1, -c.R1inv * (c.B1.transpose() * P1 + c.D1.transpose() * Q1));
            rep.r_u.at(i, j)[0] = (u - target_u).norm();
            const Eigen::VectorXd grad_u = c.B1.transpose() * P1 + c.D1.transpose() * Q1 + c.W1.R() * u;
            double worst_u = std::numeric_limits<double>::infinity();
            for (int k = 0; k < probes; ++k) {
                const double val = grad_u.dot(spec.gamma1.sample(rng) - u);
                worst_u = std::min(worst_u, val);
                rep.vi_violations += val < -tol;
            }
            rep.vi_u.at(i, j)[0] = worst_u;
            rep.max_r_u = std::max(rep.max_r_u, rep.r_u.at(i, j)[0]);
            rep.worst_vi_u = std::min(rep.worst_vi_u, worst_u);
        }
    }
    return rep;
}

NodeProcess forward_state(const GameSpec& spec, const Lattice& lattice, const NodeProcess& u, const NodeProcess& v) {
    require_full(lattice);
    NodeProcess x(lattice, spec.n);
    x.layer(0) = spec.x0;
    const double dt = lattice.dt(), s = lattice.sqrt_dt();
    for (int i = 0; i < lattice.N(); ++i) {
        const auto& c = spec.at(lattice.time(i));
        const Mat& X = x.layer(i);
        const Mat drift = X + dt * (c.A * X + c.B1 * u.layer(i) + c.B2 * v.layer(i));
        const Mat sg = c.C * X + c.D1 * u.layer(i) + c.D2 * v.layer(i);
        scatter(x.layer(i + 1), drift - s * sg, drift + s * sg);
    }
    return x;
}

LatticeCosts lattice_costs(const GameSpec& spec, const Lattice& lattice, const NodeProcess& x, const NodeProcess& u,
                           const NodeProcess& v) {
    LatticeCosts J;
    const double dt = lattice.dt();
    for (int i = 0; i < lattice.N(); ++i) {
        const auto& c = spec.at(lattice.time(i));
        for (int j = 0; j < lattice.nodes(i); ++j) {
            const double w = lattice.weight(i, j);
            const Eigen::VectorXd xi = x.at(i, j), ui = u.at(i, j), vi = v.at(i, j);
            J.J1 += w * 0.5 * (xi.dot(c.Q1 * xi) + ui.dot(c.R1 * ui)) * dt;
            J.J2 += w * 0.5 * (xi.dot(c.Q2 * xi) + vi.dot(c.R2 * vi)) * dt;
        }
    }
    const int N = lattice.N();
    for (int j = 0; j < lattice.nodes(N); ++j) {
        const double w = lattice.weight(N, j);
        const Eigen::VectorXd xN = x.at(N, j);
        J.J1 += w * 0.5 * xN.dot(spec.Phi1 * xN);
        J.J2 += w * 0.5 * xN.dot(spec.Phi2 * xN);
    }
    return J;
}

FollowerGains solve_follower_gains(const GameSpec& spec, const Lattice& lattice) {
    if (!spec.gamma2.is_full())
        throw std::invalid_argument("follower gains need an unconstrained follower");
    const int N = lattice.N();
    const double dt = lattice.dt();
    const Mat I = Mat::Identity(spec.n, spec.n);
    FollowerGains out;
    out.K.assign(N + 1, Mat());
    out.G.assign(N, Mat());
    out.K[N] = spec.Phi2;
    for (int i = N - 1; i >= 0; --i) {
        const auto& c = spec.at(lattice.time(i));
        const Mat& Kn = out.K[i + 1];
        const Mat lhs = c.R2 + dt * c.B2.transpose() * Kn * c.B2 + c.D2.transpose() * Kn * c.D2;
        const Mat rhs = c.B2.transpose() * Kn * (I + dt * c.A) + c.D2.transpose() * Kn * c.C;
        Eigen::FullPivLU<Mat> lu(lhs);
        if (lu.rcond() < 1e-12)
            throw SingularMatrix("follower gain system is singular");
        out.G[i] = -lu.solve(rhs);
        const Mat& G = out.G[i];
        out.K[i] = (I + dt * c.A.transpose()) * Kn * (I + dt * (c.A + c.B2 * G)) +
                   dt * c.C.transpose() * Kn * (c.C + c.D2 * G) + dt * c.Q2;
    }
    return out;
}

}  // namespace stackgame
