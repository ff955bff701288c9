#include "stackgame/simulate.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <random>
#include <stdexcept>
#include <thread>

#include "stackgame/errors.hpp"
#include "stackgame/projection.hpp"

namespace stackgame {

namespace {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

std::uint64_t mix64(std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

/// Stream of path `index`, a pure function of (seed, index).
std::mt19937_64 substream(std::uint64_t seed, std::uint64_t index) {
    return std::mt19937_64(mix64(mix64(seed) ^ index));
}

/// Sum in a fixed binary-tree order, independent of how the terms were produced.
double pairwise_sum(const double* a, std::size_t n) {
    if (n <= 8) {
        double s = 0.0;
        for (std::size_t i = 0; i < n; ++i)
            s += a[i];
        return s;
    }
    const std::size_t h = n / 2;
    return pairwise_sum(a, h) + pairwise_sum(a + h, n - h);
}

void mean_and_stderr(const std::vector<double>& x, double& mean, double& se) {
    const std::size_t n = x.size();
    mean = pairwise_sum(x.data(), n) / static_cast<double>(n);
    if (n < 2) {
        se = 0.0;
        return;
    }
    std::vector<double> d(n);
    for (std::size_t i = 0; i < n; ++i)
        d[i] = (x[i] - mean) * (x[i] - mean);
    se = std::sqrt(pairwise_sum(d.data(), n) / static_cast<double>(n - 1) / static_cast<double>(n));
}

template <class F>
void parallel_for(int count, int threads, F&& f) {
    threads = std::max(1, std::min(threads, count));
    if (threads == 1) {
        for (int i = 0; i < count; ++i)
            f(i);
        return;
    }
    std::vector<std::thread> pool;
    pool.reserve(threads);
    for (int w = 0; w < threads; ++w) {
        pool.emplace_back([&, w] {
            const int lo = static_cast<int>(static_cast<long long>(count) * w / threads);
            const int hi = static_cast<int>(static_cast<long long>(count) * (w + 1) / threads);
            for (int i = lo; i < hi; ++i)
                f(i);
        });
    }
    for (auto& t : pool)
        t.join();
}

struct Samples {
    std::vector<double> J1, J2;
    std::vector<Vec> terminal;  // per path
    int paths = 0;
};

/// One Euler path; sign = -1 gives the antithetic partner.
void run_path(const GameSpec& spec, const Strategy& st, const std::vector<const Coefficients*>& coef, int steps,
              std::mt19937_64 rng, double sign, double& J1, double& J2, Vec& xT) {
    const double dt = spec.T / steps, sq = std::sqrt(dt);
    const bool walk = st.lattice_walk();
    const bool scalar = spec.n == 1 && spec.m1 == 1 && spec.m2 == 1;
    std::normal_distribution<double> normal;
    Vec x = spec.x0, aux(st.aux_dim()), u(spec.m1), v(spec.m2), drift(spec.n), diff(spec.n);
    st.init(aux);
    J1 = J2 = 0.0;
    for (int k = 0; k < steps; ++k) {
        const double t = k * dt;
        const Coefficients& c = *coef[k];
        st.controls(k, t, x, aux, u, v);
        const double z = walk ? ((rng() >> 63) ? 1.0 : -1.0) : normal(rng);
        const double dW = sign * z * sq;
        if (scalar) {
            const double xs = x(0), us = u(0), vs = v(0);
            J1 += 0.5 * dt * (c.Q1(0, 0) * xs * xs + c.R1(0, 0) * us * us);
            J2 += 0.5 * dt * (c.Q2(0, 0) * xs * xs + c.R2(0, 0) * vs * vs);
            drift(0) = c.A(0, 0) * xs + c.B1(0, 0) * us + c.B2(0, 0) * vs;
            diff(0) = c.C(0, 0) * xs + c.D1(0, 0) * us + c.D2(0, 0) * vs;
        } else {
            J1 += 0.5 * dt * (x.dot(c.Q1 * x) + u.dot(c.R1 * u));
            J2 += 0.5 * dt * (x.dot(c.Q2 * x) + v.dot(c.R2 * v));
            drift.noalias() = c.A * x;
            drift.noalias() += c.B1 * u;
            drift.noalias() += c.B2 * v;
            diff.noalias() = c.C * x;
            diff.noalias() += c.D1 * u;
            diff.noalias() += c.D2 * v;
        }
        st.advance(k, t, dt, dW, x, aux);
        x += dt * drift + dW * diff;
    }
    J1 += 0.5 * x.dot(spec.Phi1 * x);
    J2 += 0.5 * x.dot(spec.Phi2 * x);
    xT = x;
}

Samples sample_costs(const GameSpec& spec, const Strategy& st, const SimConfig& cfg, bool keep_terminal) {
    cfg.check();
    spec.check_dimensions();
    std::vector<const Coefficients*> coef(cfg.steps);
    for (int k = 0; k < cfg.steps; ++k)
        coef[k] = &spec.at(k * spec.T / cfg.steps);
    const int samples = cfg.antithetic ? (cfg.paths + 1) / 2 : cfg.paths;
    const int per = cfg.antithetic ? 2 : 1;
    Samples out;
    out.paths = samples * per;
    out.J1.assign(samples, 0.0);
    out.J2.assign(samples, 0.0);
    if (keep_terminal)
        out.terminal.assign(out.paths, Vec());
    parallel_for(samples, resolve_threads(cfg.threads), [&](int s) {
        double a1 = 0.0, a2 = 0.0;
        for (int r = 0; r < per; ++r) {
            double j1, j2;
            Vec xT;
            run_path(spec, st, coef, cfg.steps, substream(cfg.seed, static_cast<std::uint64_t>(s)), r ? -1.0 : 1.0,
                     j1, j2, xT);
            a1 += j1;
            a2 += j2;
            if (keep_terminal)
                out.terminal[static_cast<std::size_t>(s) * per + r] = xT;
        }
        out.J1[s] = a1 / per;
        out.J2[s] = a2 / per;
    });
    return out;
}

CostEstimate estimate(const Samples& s) {
    CostEstimate e;
    mean_and_stderr(s.J1, e.J1, e.se1);
    mean_and_stderr(s.J2, e.J2, e.se2);
    e.samples = static_cast<int>(s.J1.size());
    e.paths = s.paths;
    return e;
}

class RiccatiStrategy : public Strategy {
public:
    RiccatiStrategy(const GameSpec& spec, const RiccatiSolution& ric) : spec_(spec), ric_(ric) {}
    std::string source() const override { return "riccati_feedback"; }
    int aux_dim() const override { return spec_.n; }
    void init(Vec& aux) const override { aux.setZero(spec_.n); }

    void controls(int, double t, const Vec& x, const Vec& k, Vec& u, Vec& v) const override {
        Vec P, Q;
        costates(t, x, k, P, Q);
        const int n = spec_.n;
        u = phi1(spec_, t, P.head(n), Q.head(n));
        v = phi2(spec_, t, P.tail(n), Q.tail(n));
    }

    void advance(int, double t, double dt, double dW, const Vec& x, Vec& k) const override {
        Vec P, Q;
        costates(t, x, k, P, Q);
        const int n = spec_.n;
        const auto& c = spec_.at(t);
        WeightedMetric W2(c.R2);
        const Vec pre = -W2.R_inv() * (c.B2.transpose() * P.tail(n) + c.D2.transpose() * Q.tail(n));
        const Mat J = projection_jacobian(spec_.gamma2, W2, pre);
        const Vec g = J.transpose() * (c.B2.transpose() * P.head(n) + c.D2.transpose() * Q.head(n));
        const Vec w = W2.R_inv() * g;
        k += (c.A * k + c.B2 * w) * dt + (c.C * k + c.D2 * w) * dW;
    }

private:
    void costates(double t, const Vec& x, const Vec& k, Vec& P, Vec& Q) const {
        Vec X(2 * spec_.n);
        X << x, k;
        P = ric_.R_at(t) * X;
        Q = ric_.Xi_at(t) * X;
    }

    const GameSpec& spec_;
    const RiccatiSolution& ric_;
};

class LatticeStrategy : public Strategy {
public:
    LatticeStrategy(const Lattice& lat, const NodeProcess& u, const NodeProcess& v, LatticeLookup lookup,
                    const NodeProcess* x)
        : lat_(lat), u_(u), v_(v), lookup_(lookup), x_(x) {
        if (lookup == LatticeLookup::Nearest && !x)
            throw std::invalid_argument("nearest-node lookup needs node states");
    }
    std::string source() const override { return "lattice_nodes"; }
    int aux_dim() const override { return 1; }
    void init(Vec& aux) const override { aux.setZero(1); }
    bool lattice_walk() const override { return lookup_ == LatticeLookup::Walk; }

    void controls(int step, double t, const Vec& x, const Vec& aux, Vec& u, Vec& v) const override {
        int i, j;
        if (lookup_ == LatticeLookup::Walk) {
            if (step >= lat_.N())
                throw std::invalid_argument("lattice walk longer than the lattice");
            i = step;
            j = static_cast<int>(aux(0));
        } else {
            i = std::min(lat_.N() - 1, static_cast<int>(std::floor(t / lat_.dt() + 1e-9)));
            const Mat& L = x_->layer(i);
            (L.colwise() - x).colwise().squaredNorm().minCoeff(&j);
        }
        u = u_.at(i, j);
        v = v_.at(i, j);
    }

    void advance(int step, double, double, double dW, const Vec&, Vec& aux) const override {
        if (lookup_ != LatticeLookup::Walk)
            return;
        const int j = static_cast<int>(aux(0));
        aux(0) = dW > 0 ? lat_.up(step, j) : lat_.down(step, j);
    }

private:
    const Lattice& lat_;
    const NodeProcess& u_;
    const NodeProcess& v_;
    LatticeLookup lookup_;
    const NodeProcess* x_;
};

class AffineLeader : public Strategy {
public:
    AffineLeader(const GameSpec& spec, int steps, std::vector<double> u2, std::vector<double> u1)
        : u2_(std::move(u2)), u1_(std::move(u1)), resp_(affine_follower_response(spec, steps, u2_, u1_)) {}
    std::string source() const override { return "affine_leader"; }
    void controls(int step, double, const Vec& x, const Vec&, Vec& u, Vec& v) const override {
        u.resize(1);
        v.resize(1);
        u(0) = u2_[step] * x(0) + u1_[step];
        v(0) = resp_.G[step] * x(0) + resp_.g[step];
    }

private:
    std::vector<double> u2_, u1_;
    AffineFollowerResponse resp_;
};

class AclmWalk : public Strategy {
public:
    AclmWalk(const Lattice& lat, const AclmSolution& sol) : lat_(lat), sol_(sol) {}
    std::string source() const override { return "aclm_strategy"; }
    int aux_dim() const override { return 1; }
    void init(Vec& aux) const override { aux.setZero(1); }
    bool lattice_walk() const override { return true; }
    void controls(int step, double, const Vec& x, const Vec& aux, Vec& u, Vec& v) const override {
        if (step >= lat_.N())
            throw std::invalid_argument("lattice walk longer than the lattice");
        const int j = static_cast<int>(aux(0));
        u.resize(1);
        v.resize(1);
        u(0) = leader_strategy(sol_, step, j, x(0));
        v(0) = sol_.G.layer(step)(0, j) * x(0);
    }
    void advance(int step, double, double, double dW, const Vec&, Vec& aux) const override {
        const int j = static_cast<int>(aux(0));
        aux(0) = dW > 0 ? lat_.up(step, j) : lat_.down(step, j);
    }

private:
    const Lattice& lat_;
    const AclmSolution& sol_;
};

}  // namespace

void SimConfig::check() const {
    if (paths < 1 || steps < 1)
        throw std::invalid_argument("simulation needs paths >= 1 and steps >= 1");
}

int resolve_threads(int requested) {
    if (requested > 0)
        return requested;
    if (const char* env = std::getenv("STACKGAME_THREADS")) {
        const int n = std::atoi(env);
        if (n > 0)
            return n;
    }
    return std::max(1u, std::thread::hardware_concurrency());
}

std::unique_ptr<Strategy> riccati_strategy(const GameSpec& spec, const RiccatiSolution& ric) {
    return std::make_unique<RiccatiStrategy>(spec, ric);
}

std::unique_ptr<Strategy> lattice_strategy(const Lattice& lattice, const NodeProcess& u, const NodeProcess& v,
                                           LatticeLookup lookup, const NodeProcess* x) {
    return std::make_unique<LatticeStrategy>(lattice, u, v, lookup, x);
}

AffineFollowerResponse affine_follower_response(const GameSpec& spec, int steps, const std::vector<double>& u2,
                                                const std::vector<double>& u1) {
    spec.check_dimensions();
    if (spec.n != 1 || spec.m1 != 1 || spec.m2 != 1 || !spec.gamma2.is_full())
        throw std::invalid_argument("affine follower response needs a scalar game with an unconstrained follower");
    if (static_cast<int>(u2.size()) != steps || static_cast<int>(u1.size()) != steps)
        throw std::invalid_argument("affine leader coefficients must have one entry per step");
    const double dt = spec.T / steps;
    constexpr int sub = 4;
    const double h = dt / sub;
    AffineFollowerResponse r;
    r.K.assign(steps + 1, 0.0);
    r.h.assign(steps + 1, 0.0);
    r.G.assign(steps, 0.0);
    r.g.assign(steps, 0.0);
    r.K[steps] = spec.Phi2(0, 0);
    for (int k = steps - 1; k >= 0; --k) {
        const auto& c = spec.at(k * dt);
        const double A = c.A(0, 0) + c.B1(0, 0) * u2[k], C = c.C(0, 0) + c.D1(0, 0) * u2[k];
        const double B1 = c.B1(0, 0), B2 = c.B2(0, 0), D1 = c.D1(0, 0), D2 = c.D2(0, 0);
        const double Q2 = c.Q2(0, 0), R2 = c.R2(0, 0), w = u1[k];
        auto gain = [&](double K) { return -(B2 * K + D2 * K * C) / (R2 + D2 * D2 * K); };
        auto rhs = [&](const Eigen::Vector2d& y) {
            const double K = y(0), hh = y(1), G = gain(K);
            Eigen::Vector2d d;
            d(0) = -(2 * K * A + K * C * C + Q2 + (K * B2 + K * C * D2) * G);
            d(1) = -((A + B2 * G) * hh + K * (B1 + (C + D2 * G) * D1) * w);
            return d;
        };
        Eigen::Vector2d y(r.K[k + 1], r.h[k + 1]);
        for (int s = 0; s < sub; ++s) {
            const Eigen::Vector2d k1 = rhs(y), k2 = rhs(y - 0.5 * h * k1), k3 = rhs(y - 0.5 * h * k2),
                                  k4 = rhs(y - h * k3);
            y -= (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4);
        }
        if (!y.allFinite())
            throw BlowUp("follower Riccati equation escapes", k * dt);
        r.K[k] = y(0);
        r.h[k] = y(1);
        const double den = R2 + D2 * D2 * y(0);
        r.G[k] = gain(y(0));
        r.g[k] = -(B2 * y(1) + D2 * y(0) * D1 * w) / den;
    }
    return r;
}

std::unique_ptr<Strategy> affine_leader_strategy(const GameSpec& spec, int steps, std::vector<double> u2,
                                                 std::vector<double> u1) {
    return std::make_unique<AffineLeader>(spec, steps, std::move(u2), std::move(u1));
}

std::unique_ptr<Strategy> aclm_strategy(const GameSpec& spec, const Lattice& lattice, const AclmSolution& sol,
                                        LatticeLookup lookup, int steps) {
    if (lookup == LatticeLookup::Walk)
        return std::make_unique<AclmWalk>(lattice, sol);
    std::vector<double> u2(steps), u1(steps);
    for (int k = 0; k < steps; ++k) {
        const double t = k * spec.T / steps;
        const int i = std::min(lattice.N() - 1, static_cast<int>(std::floor(t / lattice.dt() + 1e-9)));
        const AffineCoefficients a = leader_strategy_mean(sol, lattice, i);
        u2[k] = a.u2;
        u1[k] = a.u1;
    }
    return affine_leader_strategy(spec, steps, std::move(u2), std::move(u1));
}

CostEstimate simulate_costs(const GameSpec& spec, const Strategy& strategy, const SimConfig& cfg,
                            std::vector<Eigen::VectorXd>* terminal) {
    Samples s = sample_costs(spec, strategy, cfg, terminal != nullptr);
    if (terminal)
        *terminal = std::move(s.terminal);
    return estimate(s);
}

ProbeReport perturbation_probe(const GameSpec& spec, const Lattice& lattice, const NodeProcess& u,
                               const NodeProcess& v, const SimConfig& cfg, Role role, int trials, double eps,
                               double tol, std::uint64_t probe_seed) {
    SimConfig walk = cfg;
    walk.steps = lattice.N();
    auto base_st = lattice_strategy(lattice, u, v, LatticeLookup::Walk);
    const Samples base = sample_costs(spec, *base_st, walk, false);
    const bool leader = role == Role::Leader;
    const NodeProcess& ctrl = leader ? u : v;
    const ConstraintSet& set = leader ? spec.gamma1 : spec.gamma2;

    ProbeReport rep;
    rep.role = role;
    rep.eps = eps;
    rep.tol = tol;
    rep.worst_margin = std::numeric_limits<double>::infinity();
    for (int k = 0; k < trials; ++k) {
        std::mt19937_64 rng = substream(probe_seed, static_cast<std::uint64_t>(k));
        std::normal_distribution<double> normal;
        NodeProcess pert = ctrl;
        for (int i = 0; i < lattice.N(); ++i) {
            Mat& L = pert.layer(i);
            for (int j = 0; j < L.cols(); ++j) {
                Vec d(L.rows());
                for (int r = 0; r < d.size(); ++r)
                    d(r) = normal(rng);
                if (eps != 0.0)
                    L.col(j) = project_euclidean(set, Vec(L.col(j) + eps * d));
            }
        }
        Samples trial;
        if (leader) {
            const FbsdeSolution resp = solve_follower(spec, lattice, pert);
            auto st = lattice_strategy(lattice, pert, resp.v, LatticeLookup::Walk);
            trial = sample_costs(spec, *st, walk, false);
        } else {
            auto st = lattice_strategy(lattice, u, pert, LatticeLookup::Walk);
            trial = sample_costs(spec, *st, walk, false);
        }
        const std::vector<double>& b = leader ? base.J1 : base.J2;
        const std::vector<double>& p = leader ? trial.J1 : trial.J2;
        std::vector<double> diff(b.size());
        for (std::size_t s = 0; s < b.size(); ++s)
            diff[s] = p[s] - b[s];
        double mean, se;
        mean_and_stderr(diff, mean, se);
        rep.delta.push_back(mean);
        rep.stderr_.push_back(se);
        const double margin = mean + 3 * se + tol;
        rep.worst_margin = std::min(rep.worst_margin, margin);
        if (margin < 0)
            ++rep.improving;
    }
    return rep;
}

GridSearchResult grid_search_affine(const GameSpec& spec, double K, int n_u2, double u1_lo, double u1_hi, int n_u1,
                                    const SimConfig& cfg) {
    if (n_u2 < 1 || n_u1 < 1)
        throw std::invalid_argument("grid search needs at least one point per axis");
    GridSearchResult best;
    best.best.J1 = std::numeric_limits<double>::infinity();
    for (int a = 0; a < n_u2; ++a) {
        const double u2 = n_u2 == 1 ? 0.0 : -K + 2 * K * a / (n_u2 - 1);
        for (int b = 0; b < n_u1; ++b) {
            const double u1 = n_u1 == 1 ? u1_lo : u1_lo + (u1_hi - u1_lo) * b / (n_u1 - 1);
            auto st = affine_leader_strategy(spec, cfg.steps, std::vector<double>(cfg.steps, u2),
                                             std::vector<double>(cfg.steps, u1));
            const CostEstimate e = simulate_costs(spec, *st, cfg);
            ++best.evaluated;
            if (e.J1 < best.best.J1) {
                best.best = e;
                best.u2 = u2;
                best.u1 = u1;
            }
        }
    }
    return best;
}

}  // namespace stackgame
