#pragma once

#include <Eigen/Dense>
#include <random>
#include <string>
#include <variant>

namespace stackgame {

struct GameSpec;

struct FullSpace {};
struct Box {
    Eigen::VectorXd lower, upper;
};
struct NonnegativeOrthant {};
struct EuclideanBall {
    Eigen::VectorXd center;
    double radius = 0.0;
};
struct Halfspace {
    Eigen::VectorXd a;
    double b = 0.0;
};
struct Interval {
    double lo = 0.0, hi = 0.0;
};

/// Closed convex subset of R^m.
class ConstraintSet {
public:
    using Shape = std::variant<FullSpace, Box, NonnegativeOrthant, EuclideanBall, Halfspace, Interval>;

    ConstraintSet() : ConstraintSet(FullSpace{}, 1) {}
    ConstraintSet(Shape shape, int dim);

    static ConstraintSet full(int dim) { return {FullSpace{}, dim}; }
    static ConstraintSet box(Eigen::VectorXd lo, Eigen::VectorXd hi);
    static ConstraintSet orthant(int dim) { return {NonnegativeOrthant{}, dim}; }
    static ConstraintSet ball(Eigen::VectorXd center, double radius);
    static ConstraintSet halfspace(Eigen::VectorXd a, double b);
    static ConstraintSet interval(double lo, double hi);

    int dim() const { return dim_; }
    const Shape& shape() const { return shape_; }
    std::string type_name() const;
    bool is_full() const { return std::holds_alternative<FullSpace>(shape_); }
    // true for sets whose active constraints are coordinate bounds
    bool is_coordinatewise() const;
    bool contains(const Eigen::VectorXd& z, double tol = 1e-12) const;

    /// Coordinatewise bounds (±inf where unbounded). Only for coordinatewise sets.
    Eigen::VectorXd lower_bounds() const;
    Eigen::VectorXd upper_bounds() const;

    /// Random point of the set (for probing variational inequalities).
    Eigen::VectorXd sample(std::mt19937_64& rng, double scale = 2.0) const;

    bool operator==(const ConstraintSet& o) const;

private:
    Shape shape_;
    int dim_;
};

/// Inner product <R a, b> on R^m.
class WeightedMetric {
public:
    explicit WeightedMetric(Eigen::MatrixXd R);

    const Eigen::MatrixXd& R() const { return R_; }
    const Eigen::MatrixXd& R_inv() const { return R_inv_; }
    double lambda_max() const { return lmax_; }
    double lambda_min() const { return lmin_; }
    bool is_diagonal() const { return diagonal_; }
    bool is_scalar() const { return scalar_; }

    double inner(const Eigen::VectorXd& a, const Eigen::VectorXd& b) const { return a.dot(R_ * b); }
    double norm(const Eigen::VectorXd& a) const { return std::sqrt(std::max(0.0, inner(a, a))); }

private:
    Eigen::MatrixXd R_, R_inv_;
    double lmax_ = 0.0, lmin_ = 0.0;
    bool diagonal_ = false, scalar_ = false;
};

struct ProjectionOptions {
    double tol = 1e-12;
    int max_iter = 100000;
};

/// Euclidean projection.
Eigen::VectorXd project_euclidean(const ConstraintSet& set, const Eigen::VectorXd& x);

/// Whether project() uses an exact formula for this (set, metric) pair.
bool has_closed_form(const ConstraintSet& set, const WeightedMetric& metric);

/// argmin_{z in set} ||x - z||_R
Eigen::VectorXd project(const ConstraintSet& set, const WeightedMetric& metric, const Eigen::VectorXd& x,
                        const ProjectionOptions& opts = {});

/// B-derivative of the projection at x (zero on clamped coordinates).
Eigen::MatrixXd projection_jacobian(const ConstraintSet& set, const WeightedMetric& metric,
                                    const Eigen::VectorXd& x);

/// Follower pointwise optimizer P_{Gamma2}[-R2^{-1}(B2' p + D2' q)] at time t.
Eigen::VectorXd phi2(const GameSpec& spec, double t, const Eigen::VectorXd& p2, const Eigen::VectorXd& q2);
/// Leader pointwise optimizer P_{Gamma1}[-R1^{-1}(B1' p + D1' q)] at time t.
Eigen::VectorXd phi1(const GameSpec& spec, double t, const Eigen::VectorXd& p1, const Eigen::VectorXd& q1);

}  // namespace stackgame

namespace stackgame {

/// Projects every column of X.
Eigen::MatrixXd project_columns(const ConstraintSet& set, const WeightedMetric& metric, const Eigen::MatrixXd& X);

/// Column j of the result is J(X_j)^T G_j with J the projection B-derivative.
Eigen::MatrixXd jacobian_transpose_apply(const ConstraintSet& set, const WeightedMetric& metric,
                                         const Eigen::MatrixXd& X, const Eigen::MatrixXd& G);

/// Number of columns of X on which the projection is not locally the identity.
int count_clamped(const ConstraintSet& set, const WeightedMetric& metric, const Eigen::MatrixXd& X);

}  // namespace stackgame
