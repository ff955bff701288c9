#include "stackgame/oracle.hpp"

#include <cmath>
#include <limits>
#include <random>

#include "stackgame/errors.hpp"

namespace stackgame {

namespace {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

void require_small_tree(const Lattice& lattice, int max_n) {
    if (lattice.layout() != Layout::Full)
        throw std::invalid_argument("oracle works on the full tree");
    if (lattice.N() > max_n)
        throw std::invalid_argument("oracle is limited to N <= " + std::to_string(max_n));
}

int interior(const Lattice& lattice) { return (1 << lattice.N()) - 1; }

// offset of node (i, j) in flattened order
int flat_node(int i, int j) { return (1 << i) - 1 + j; }

/// Forward recursion of the discrete state; returns node states in flattened order (all layers 0..N).
std::vector<Vec> simulate_tree(const GameSpec& spec, const Lattice& lattice, const Vec& u, const Vec& v) {
    const int N = lattice.N();
    const double dt = lattice.dt(), s = lattice.sqrt_dt();
    const int m1 = spec.m1, m2 = spec.m2;
    std::vector<Vec> x((1 << (N + 1)) - 1);
    x[0] = spec.x0;
    for (int i = 0; i < N; ++i) {
        const auto& c = spec.at(lattice.time(i));
        for (int j = 0; j < (1 << i); ++j) {
            const int id = flat_node(i, j);
            const Vec& xi = x[id];
            const Vec ui = u.segment(id * m1, m1), vi = v.segment(id * m2, m2);
            const Vec b = c.A * xi + c.B1 * ui + c.B2 * vi;
            const Vec sg = c.C * xi + c.D1 * ui + c.D2 * vi;
            x[flat_node(i + 1, 2 * j)] = xi + b * dt - sg * s;
            x[flat_node(i + 1, 2 * j + 1)] = xi + b * dt + sg * s;
        }
    }
    return x;
}

double node_weight(int i) { return std::ldexp(1.0, -i); }

struct Bounds {
    Vec lo, hi;
};

Bounds coordinate_bounds(const ConstraintSet& set, int nodes) {
    const Vec lo = set.lower_bounds(), hi = set.upper_bounds();
    return {lo.replicate(nodes, 1), hi.replicate(nodes, 1)};
}

/// Per-coordinate scale 1/(w dt) turning the gradient into a per-node quantity.
Vec gradient_scale(const Lattice& lattice, int m) {
    Vec scale(interior(lattice) * m);
    for (int i = 0; i < lattice.N(); ++i)
        for (int j = 0; j < (1 << i); ++j)
            scale.segment(flat_node(i, j) * m, m).setConstant(1.0 / (node_weight(i) * lattice.dt()));
    return scale;
}

Vec project_blocks(const ConstraintSet& set, const Vec& z) {
    const int m = set.dim();
    Vec out(z.size());
    for (Eigen::Index k = 0; k < z.size() / m; ++k)
        out.segment(k * m, m) = project_euclidean(set, z.segment(k * m, m));
    return out;
}

/// Exact minimizer of a strictly convex quadratic (Hessian H, linear term c) over a box, by primal active sets.
bool box_qp_active_set(const Mat& H, const Vec& c, const Bounds& b, Vec& z) {
    const Eigen::Index n = z.size();
    // 0 free, -1 at lower, +1 at upper
    std::vector<int> state(n, 0);
    const Vec g0 = H * z + c;
    for (Eigen::Index k = 0; k < n; ++k) {
        if (std::isfinite(b.lo[k]) && std::abs(z[k] - b.lo[k]) <= 1e-9 && g0[k] > 0)
            state[k] = -1;
        else if (std::isfinite(b.hi[k]) && std::abs(z[k] - b.hi[k]) <= 1e-9 && g0[k] < 0)
            state[k] = 1;
    }
    for (int round = 0; round < 200; ++round) {
        std::vector<Eigen::Index> F, A;
        Vec zA = z;
        for (Eigen::Index k = 0; k < n; ++k) {
            if (state[k] == 0)
                F.push_back(k);
            else {
                A.push_back(k);
                zA[k] = state[k] < 0 ? b.lo[k] : b.hi[k];
            }
        }
        Vec znew = zA;
        if (!F.empty()) {
            Mat HFF(F.size(), F.size());
            Vec rhs(F.size());
            for (std::size_t r = 0; r < F.size(); ++r) {
                double acc = c[F[r]];
                for (Eigen::Index a : A)
                    acc += H(F[r], a) * zA[a];
                rhs[r] = -acc;
                for (std::size_t q = 0; q < F.size(); ++q)
                    HFF(r, q) = H(F[r], F[q]);
            }
            const Vec zF = HFF.ldlt().solve(rhs);
            for (std::size_t r = 0; r < F.size(); ++r)
                znew[F[r]] = zF[r];
        }
        bool changed = false;
        for (Eigen::Index k : F) {
            if (znew[k] < b.lo[k]) {
                state[k] = -1;
                changed = true;
            } else if (znew[k] > b.hi[k]) {
                state[k] = 1;
                changed = true;
            }
        }
        if (changed)
            continue;
        const Vec g = H * znew + c;
        Eigen::Index worst = -1;
        double worst_val = 0.0;
        for (Eigen::Index k : A) {
            const double wrong = state[k] < 0 ? -g[k] : g[k];
            if (wrong > worst_val) {
                worst_val = wrong;
                worst = k;
            }
        }
        if (worst >= 0) {
            state[worst] = 0;
            continue;
        }
        z = znew;
        return true;
    }
    return false;
}

double gradient_map_norm(const ConstraintSet& set, const Vec& z, const Vec& scaled_grad) {
    return (z - project_blocks(set, z - scaled_grad)).cwiseAbs().maxCoeff();
}

}  // namespace

Vec flatten_controls(const NodeProcess& proc, const Lattice& lattice) {
    const int m = proc.dim();
    Vec out(lattice.interior_nodes() * m);
    int offset = 0;
    for (int i = 0; i < lattice.N(); ++i)
        for (int j = 0; j < lattice.nodes(i); ++j, offset += m)
            out.segment(offset, m) = proc.at(i, j);
    return out;
}

NodeProcess unflatten_controls(const Vec& flat, const Lattice& lattice, int dim) {
    NodeProcess out(lattice, dim);
    int offset = 0;
    for (int i = 0; i < lattice.N(); ++i)
        for (int j = 0; j < lattice.nodes(i); ++j, offset += dim)
            out.at(i, j) = flat.segment(offset, dim);
    return out;
}

OracleObjective follower_objective(const GameSpec& spec, const Lattice& lattice, const Vec& u, const Vec& v) {
    require_small_tree(lattice, 8);
    const int N = lattice.N();
    const double dt = lattice.dt(), s = lattice.sqrt_dt();
    const int m1 = spec.m1, m2 = spec.m2;
    const auto x = simulate_tree(spec, lattice, u, v);

    OracleObjective out;
    out.gradient = Vec::Zero(v.size());
    std::vector<Vec> xbar(x.size());
    for (int j = 0; j < (1 << N); ++j) {
        const int id = flat_node(N, j);
        out.value += node_weight(N) * 0.5 * x[id].dot(spec.Phi2 * x[id]);
        xbar[id] = node_weight(N) * (spec.Phi2 * x[id]);
    }
    for (int i = N - 1; i >= 0; --i) {
        const auto& c = spec.at(lattice.time(i));
        const double w = node_weight(i);
        const Mat Jdown = Mat::Identity(spec.n, spec.n) + c.A * dt - c.C * s;
        const Mat Jup = Mat::Identity(spec.n, spec.n) + c.A * dt + c.C * s;
        const Mat Vdown = c.B2 * dt - c.D2 * s, Vup = c.B2 * dt + c.D2 * s;
        for (int j = 0; j < (1 << i); ++j) {
            const int id = flat_node(i, j);
            const Vec vi = v.segment(id * m2, m2);
            out.value += w * 0.5 * (x[id].dot(c.Q2 * x[id]) + vi.dot(c.R2 * vi)) * dt;
            const Vec& ad = xbar[flat_node(i + 1, 2 * j)];
            const Vec& au = xbar[flat_node(i + 1, 2 * j + 1)];
            xbar[id] = w * dt * (c.Q2 * x[id]) + Jdown.transpose() * ad + Jup.transpose() * au;
            out.gradient.segment(id * m2, m2) = w * dt * (c.R2 * vi) + Vdown.transpose() * ad + Vup.transpose() * au;
        }
    }
    (void)m1;
    return out;
}

double leader_cost(const GameSpec& spec, const Lattice& lattice, const Vec& u, const Vec& v) {
    const int N = lattice.N();
    const double dt = lattice.dt();
    const int m1 = spec.m1;
    const auto x = simulate_tree(spec, lattice, u, v);
    double J = 0.0;
    for (int i = 0; i < N; ++i) {
        const auto& c = spec.at(lattice.time(i));
        for (int j = 0; j < (1 << i); ++j) {
            const int id = flat_node(i, j);
            const Vec ui = u.segment(id * m1, m1);
            J += node_weight(i) * 0.5 * (x[id].dot(c.Q1 * x[id]) + ui.dot(c.R1 * ui)) * dt;
        }
    }
    for (int j = 0; j < (1 << N); ++j) {
        const int id = flat_node(N, j);
        J += node_weight(N) * 0.5 * x[id].dot(spec.Phi1 * x[id]);
    }
    return J;
}

OracleFollowerResult oracle_follower(const GameSpec& spec, const Lattice& lattice, const NodeProcess& leader_controls,
                                     const OracleSettings& settings) {
    require_small_tree(lattice, 6);
    spec.check_dimensions();
    const int m2 = spec.m2;
    const Vec u = flatten_controls(leader_controls, lattice);
    const Vec scale = gradient_scale(lattice, m2);
    const ConstraintSet& set = spec.gamma2;

    Vec v = project_blocks(set, Vec::Zero(interior(lattice) * m2));
    OracleObjective f = follower_objective(spec, lattice, u, v);
    OracleFollowerResult out;
    out.objective_trace.push_back(f.value);
    double tau = 1.0;
    double gmap = gradient_map_norm(set, v, scale.cwiseProduct(f.gradient));
    const double pg_tol = set.is_coordinatewise() ? std::max(settings.tol, 1e-7) : settings.tol;
    int it = 0;
    while (gmap > pg_tol && it < settings.max_iter) {
        ++it;
        const Vec step = scale.cwiseProduct(f.gradient);
        for (;;) {
            const Vec trial = project_blocks(set, v - tau * step);
            const OracleObjective ft = follower_objective(spec, lattice, u, trial);
            if (ft.value <= f.value + 1e-4 * f.gradient.dot(trial - v) || tau < 1e-12) {
                v = trial;
                f = ft;
                break;
            }
            tau *= 0.5;
        }
        tau = std::min(1.0, 2.0 * tau);
        out.objective_trace.push_back(f.value);
        gmap = gradient_map_norm(set, v, scale.cwiseProduct(f.gradient));
    }

    if (set.is_coordinatewise()) {
        // the objective is quadratic: assemble it and solve the box QP exactly
        const Eigen::Index nv = v.size();
        const Vec c0 = follower_objective(spec, lattice, u, Vec::Zero(nv)).gradient;
        Mat H(nv, nv);
        for (Eigen::Index k = 0; k < nv; ++k) {
            Vec e = Vec::Zero(nv);
            e[k] = 1.0;
            H.col(k) = follower_objective(spec, lattice, u, e).gradient - c0;
        }
        H = 0.5 * (H + H.transpose());
        Vec z = v;
        if (box_qp_active_set(H, c0, coordinate_bounds(set, interior(lattice)), z)) {
            const OracleObjective fz = follower_objective(spec, lattice, u, z);
            const double gz = gradient_map_norm(set, z, scale.cwiseProduct(fz.gradient));
            if (fz.value <= f.value + 1e-12 && gz <= gmap) {
                v = z;
                f = fz;
                gmap = gz;
                out.polished = true;
                out.objective_trace.push_back(f.value);
            }
        }
    }
    while (gmap > settings.tol && it < settings.max_iter) {
        ++it;
        const Vec step = scale.cwiseProduct(f.gradient);
        for (;;) {
            const Vec trial = project_blocks(set, v - tau * step);
            const OracleObjective ft = follower_objective(spec, lattice, u, trial);
            if (ft.value <= f.value + 1e-4 * f.gradient.dot(trial - v) || tau < 1e-12) {
                v = trial;
                f = ft;
                break;
            }
            tau *= 0.5;
        }
        tau = std::min(1.0, 2.0 * tau);
        out.objective_trace.push_back(f.value);
        gmap = gradient_map_norm(set, v, scale.cwiseProduct(f.gradient));
    }
    if (gmap > settings.tol)
        throw NotConverged("oracle follower stopped with gradient-map norm " + std::to_string(gmap),
                           out.objective_trace);
    out.v = unflatten_controls(v, lattice, m2);
    out.J2 = f.value;
    out.iterations = it;
    out.gradient_map_norm = gmap;
    return out;
}

OracleLeaderResult oracle_leader(const GameSpec& spec, const Lattice& lattice, const OracleLeaderSettings& settings,
                                 const NodeProcess* start) {
    require_small_tree(lattice, 4);
    if (settings.restarts < 4)
        throw std::invalid_argument("oracle leader needs at least 4 restarts");
    const int m1 = spec.m1;
    const ConstraintSet& set = spec.gamma1;
    const Vec scale = gradient_scale(lattice, m1);

    auto follower_of = [&](const Vec& u) {
        return flatten_controls(oracle_follower(spec, lattice, unflatten_controls(u, lattice, m1)).v, lattice);
    };
    auto J1 = [&](const Vec& u) { return leader_cost(spec, lattice, u, follower_of(u)); };
    auto gradient = [&](const Vec& u) {
        Vec g(u.size());
        for (Eigen::Index k = 0; k < u.size(); ++k) {
            Vec up = u, um = u;
            up[k] += settings.h;
            um[k] -= settings.h;
            g[k] = (J1(up) - J1(um)) / (2.0 * settings.h);
        }
        return g;
    };

    std::vector<std::pair<std::string, Vec>> starts;
    if (start)
        starts.emplace_back("max_principle", project_blocks(set, flatten_controls(*start, lattice)));
    std::mt19937_64 rng(settings.seed);
    for (int r = 0; r < settings.restarts; ++r) {
        Vec u0(interior(lattice) * m1);
        for (int k = 0; k < interior(lattice); ++k)
            u0.segment(k * m1, m1) = set.sample(rng, 0.5);
        starts.emplace_back("random_" + std::to_string(r), u0);
    }

    OracleLeaderResult out;
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t r = 0; r < starts.size(); ++r) {
        Vec u = starts[r].second;
        double f = J1(u);
        Vec g = gradient(u);
        double gmap = gradient_map_norm(set, u, scale.cwiseProduct(g));
        double tau = 1.0;
        int it = 0;
        while (gmap > settings.tol && it < settings.max_iter) {
            ++it;
            const Vec step = scale.cwiseProduct(g);
            bool moved = false;
            for (;;) {
                const Vec trial = project_blocks(set, u - tau * step);
                const double ft = J1(trial);
                if (ft <= f + 1e-4 * g.dot(trial - u)) {
                    moved = (trial - u).cwiseAbs().maxCoeff() > 0.0;
                    u = trial;
                    f = ft;
                    break;
                }
                tau *= 0.5;
                if (tau < 1e-14)
                    break;
            }
            if (!moved)
                break;
            tau = std::min(1.0, 2.0 * tau);
            g = gradient(u);
            gmap = gradient_map_norm(set, u, scale.cwiseProduct(g));
        }
        out.restarts.push_back({starts[r].first, f, it, gmap, u});
        if (f < best) {
            best = f;
            out.best = static_cast<int>(r);
        }
    }
    const Vec u = out.restarts[out.best].u;
    const Vec v = follower_of(u);
    out.u = unflatten_controls(u, lattice, m1);
    out.v = unflatten_controls(v, lattice, spec.m2);
    out.J1 = leader_cost(spec, lattice, u, v);
    out.J2 = follower_objective(spec, lattice, u, v).value;
    return out;
}

}  // namespace stackgame
