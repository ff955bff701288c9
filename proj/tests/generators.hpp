#pragma once

#include <Eigen/Dense>
#include <random>
#include <string>
#include <vector>

#include "stackgame/projection.hpp"

namespace gen {

inline Eigen::VectorXd gaussian(std::mt19937_64& rng, int n, double scale = 1.0) {
    std::normal_distribution<double> g(0.0, scale);
    Eigen::VectorXd v(n);
    for (int i = 0; i < n; ++i)
        v[i] = g(rng);
    return v;
}

enum class MetricKind { Scalar, Diagonal, Dense };

/// Symmetric positive definite metric with eigenvalues in [0.5, 3].
inline Eigen::MatrixXd metric(std::mt19937_64& rng, int n, MetricKind kind) {
    std::uniform_real_distribution<double> eig(0.5, 3.0);
    if (kind == MetricKind::Scalar)
        return eig(rng) * Eigen::MatrixXd::Identity(n, n);
    Eigen::VectorXd d(n);
    for (int i = 0; i < n; ++i)
        d[i] = eig(rng);
    if (kind == MetricKind::Diagonal || n == 1)
        return d.asDiagonal();
    Eigen::MatrixXd G(n, n);
    for (int j = 0; j < n; ++j)
        G.col(j) = gaussian(rng, n);
    const Eigen::MatrixXd Q = Eigen::HouseholderQR<Eigen::MatrixXd>(G).householderQ();
    Eigen::MatrixXd R = Q * d.asDiagonal() * Q.transpose();
    return 0.5 * (R + R.transpose());
}

inline const std::vector<std::string>& set_kinds() {
    static const std::vector<std::string> kinds{"full_space", "box", "orthant", "ball", "halfspace", "interval"};
    return kinds;
}

/// Random set of the given kind in dimension n (interval ignores n).
inline stackgame::ConstraintSet set(std::mt19937_64& rng, const std::string& kind, int n) {
    using stackgame::ConstraintSet;
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    if (kind == "full_space")
        return ConstraintSet::full(n);
    if (kind == "orthant")
        return ConstraintSet::orthant(n);
    if (kind == "interval") {
        const double a = u(rng), w = 0.1 + std::abs(u(rng));
        return ConstraintSet::interval(a, a + w);
    }
    if (kind == "ball")
        return ConstraintSet::ball(gaussian(rng, n, 0.5), 0.2 + std::abs(u(rng)));
    if (kind == "halfspace") {
        Eigen::VectorXd a = gaussian(rng, n);
        if (a.norm() < 1e-3)
            a[0] = 1.0;
        return ConstraintSet::halfspace(a, u(rng));
    }
    Eigen::VectorXd lo(n), hi(n);
    const double inf = std::numeric_limits<double>::infinity();
    std::uniform_int_distribution<int> pick(0, 5);
    for (int i = 0; i < n; ++i) {
        lo[i] = u(rng);
        hi[i] = lo[i] + 0.1 + std::abs(u(rng));
        const int p = pick(rng);
        if (p == 0)
            lo[i] = -inf;
        else if (p == 1)
            hi[i] = inf;
    }
    return ConstraintSet::box(lo, hi);
}

}  // namespace gen
