#include "stackgame/projection.hpp"

#include <cmath>
#include <limits>

#include "stackgame/core_model.hpp"
#include "stackgame/errors.hpp"

namespace stackgame {

namespace {

constexpr double inf = std::numeric_limits<double>::infinity();

template <class... Ts>
struct overloaded : Ts... {
    using Ts::operator()...;
};
template <class... Ts>
overloaded(Ts...) -> overloaded<Ts...>;

}  // namespace

ConstraintSet::ConstraintSet(Shape shape, int dim) : shape_(std::move(shape)), dim_(dim) {
    if (dim_ < 1)
        throw MalformedSpec("constraint set dimension must be positive");
    std::visit(overloaded{
                   [](const FullSpace&) {},
                   [](const NonnegativeOrthant&) {},
                   [&](const Box& b) {
                       if (b.lower.size() != dim_ || b.upper.size() != dim_)
                           throw MalformedSpec("box bounds have wrong dimension");
                       for (int i = 0; i < dim_; ++i)
                           if (!(b.lower[i] <= b.upper[i]))
                               throw MalformedSpec("box lower bound exceeds upper bound");
                   },
                   [&](const EuclideanBall& b) {
                       if (b.center.size() != dim_)
                           throw MalformedSpec("ball center has wrong dimension");
                       if (!(b.radius >= 0.0) || !std::isfinite(b.radius))
                           throw MalformedSpec("ball radius must be finite and nonnegative");
                   },
                   [&](const Halfspace& h) {
                       if (h.a.size() != dim_)
                           throw MalformedSpec("halfspace normal has wrong dimension");
                       if (h.a.norm() == 0.0)
                           throw MalformedSpec("halfspace normal must be nonzero");
                   },
                   [&](const Interval& i) {
                       if (dim_ != 1)
                           throw MalformedSpec("interval constraint requires dimension 1");
                       if (!(i.lo <= i.hi))
                           throw MalformedSpec("interval lo exceeds hi");
                   },
               },
               shape_);
}

ConstraintSet ConstraintSet::box(Eigen::VectorXd lo, Eigen::VectorXd hi) {
    const int m = static_cast<int>(lo.size());
    return {Box{std::move(lo), std::move(hi)}, m};
}

ConstraintSet ConstraintSet::ball(Eigen::VectorXd center, double radius) {
    const int m = static_cast<int>(center.size());
    return {EuclideanBall{std::move(center), radius}, m};
}

ConstraintSet ConstraintSet::halfspace(Eigen::VectorXd a, double b) {
    const int m = static_cast<int>(a.size());
    return {Halfspace{std::move(a), b}, m};
}

ConstraintSet ConstraintSet::interval(double lo, double hi) { return {Interval{lo, hi}, 1}; }

std::string ConstraintSet::type_name() const {
    return std::visit(overloaded{
                          [](const FullSpace&) { return std::string("full_space"); },
                          [](const Box&) { return std::string("box"); },
                          [](const NonnegativeOrthant&) { return std::string("orthant"); },
                          [](const EuclideanBall&) { return std::string("ball"); },
                          [](const Halfspace&) { return std::string("halfspace"); },
                          [](const Interval&) { return std::string("interval"); },
                      },
                      shape_);
}

bool ConstraintSet::is_coordinatewise() const {
    return std::holds_alternative<FullSpace>(shape_) || std::holds_alternative<Box>(shape_) ||
           std::holds_alternative<NonnegativeOrthant>(shape_) || std::holds_alternative<Interval>(shape_);
}

Eigen::VectorXd ConstraintSet::lower_bounds() const {
    return std::visit(overloaded{
                          [&](const FullSpace&) -> Eigen::VectorXd { return Eigen::VectorXd::Constant(dim_, -inf); },
                          [&](const Box& b) -> Eigen::VectorXd { return b.lower; },
                          [&](const NonnegativeOrthant&) -> Eigen::VectorXd { return Eigen::VectorXd::Zero(dim_); },
                          [&](const Interval& i) -> Eigen::VectorXd { return Eigen::VectorXd::Constant(1, i.lo); },
                          [&](const auto&) -> Eigen::VectorXd {
                              throw std::logic_error("lower_bounds on a non-coordinatewise set");
                          },
                      },
                      shape_);
}

Eigen::VectorXd ConstraintSet::upper_bounds() const {
    return std::visit(overloaded{
                          [&](const FullSpace&) -> Eigen::VectorXd { return Eigen::VectorXd::Constant(dim_, inf); },
                          [&](const Box& b) -> Eigen::VectorXd { return b.upper; },
                          [&](const NonnegativeOrthant&) -> Eigen::VectorXd { return Eigen::VectorXd::Constant(dim_, inf); },
                          [&](const Interval& i) -> Eigen::VectorXd { return Eigen::VectorXd::Constant(1, i.hi); },
                          [&](const auto&) -> Eigen::VectorXd {
                              throw std::logic_error("upper_bounds on a non-coordinatewise set");
                          },
                      },
                      shape_);
}

bool ConstraintSet::contains(const Eigen::VectorXd& z, double tol) const {
    if (z.size() != dim_)
        return false;
    return std::visit(overloaded{
                          [&](const FullSpace&) { return true; },
                          [&](const NonnegativeOrthant&) { return z.minCoeff() >= -tol; },
                          [&](const Box& b) {
                              return ((z - b.lower).array() >= -tol).all() && ((b.upper - z).array() >= -tol).all();
                          },
                          [&](const Interval& i) { return z[0] >= i.lo - tol && z[0] <= i.hi + tol; },
                          [&](const EuclideanBall& b) { return (z - b.center).norm() <= b.radius + tol; },
                          [&](const Halfspace& h) { return h.a.dot(z) <= h.b + tol; },
                      },
                      shape_);
}

Eigen::VectorXd ConstraintSet::sample(std::mt19937_64& rng, double scale) const {
    std::normal_distribution<double> gauss(0.0, 1.0);
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    Eigen::VectorXd g(dim_);
    for (int i = 0; i < dim_; ++i)
        g[i] = scale * gauss(rng);
    return std::visit(overloaded{
                          [&](const FullSpace&) -> Eigen::VectorXd { return g; },
                          [&](const NonnegativeOrthant&) -> Eigen::VectorXd { return g.cwiseAbs(); },
                          [&](const Box& b) -> Eigen::VectorXd {
                              Eigen::VectorXd z(dim_);
                              for (int i = 0; i < dim_; ++i) {
                                  const double lo = b.lower[i], hi = b.upper[i];
                                  if (std::isfinite(lo) && std::isfinite(hi))
                                      z[i] = lo + (hi - lo) * unif(rng);
                                  else if (std::isfinite(lo))
                                      z[i] = lo + std::abs(g[i]);
                                  else if (std::isfinite(hi))
                                      z[i] = hi - std::abs(g[i]);
                                  else
                                      z[i] = g[i];
                              }
                              return z;
                          },
                          [&](const Interval& i) -> Eigen::VectorXd {
                              return Eigen::VectorXd::Constant(1, i.lo + (i.hi - i.lo) * unif(rng));
                          },
                          [&](const EuclideanBall& b) -> Eigen::VectorXd {
                              const double nrm = g.norm();
                              if (nrm == 0.0)
                                  return b.center;
                              const double r = b.radius * std::pow(unif(rng), 1.0 / dim_);
                              return b.center + r * g / nrm;
                          },
                          [&](const Halfspace& h) -> Eigen::VectorXd {
                              const double viol = h.a.dot(g) - h.b;
                              if (viol <= 0.0)
                                  return g;
                              // reflect to the feasible side
                              return g - (2.0 * viol + scale * unif(rng)) / h.a.squaredNorm() * h.a;
                          },
                      },
                      shape_);
}

bool ConstraintSet::operator==(const ConstraintSet& o) const {
    if (dim_ != o.dim_ || shape_.index() != o.shape_.index())
        return false;
    return std::visit(overloaded{
                          [&](const FullSpace&) { return true; },
                          [&](const NonnegativeOrthant&) { return true; },
                          [&](const Box& b) {
                              const auto& c = std::get<Box>(o.shape_);
                              return b.lower == c.lower && b.upper == c.upper;
                          },
                          [&](const Interval& i) {
                              const auto& c = std::get<Interval>(o.shape_);
                              return i.lo == c.lo && i.hi == c.hi;
                          },
                          [&](const EuclideanBall& b) {
                              const auto& c = std::get<EuclideanBall>(o.shape_);
                              return b.center == c.center && b.radius == c.radius;
                          },
                          [&](const Halfspace& h) {
                              const auto& c = std::get<Halfspace>(o.shape_);
                              return h.a == c.a && h.b == c.b;
                          },
                      },
                      shape_);
}

WeightedMetric::WeightedMetric(Eigen::MatrixXd R) : R_(std::move(R)) {
    if (R_.rows() != R_.cols() || R_.rows() == 0)
        throw MalformedSpec("metric matrix must be square and nonempty");
    if ((R_ - R_.transpose()).cwiseAbs().maxCoeff() > 1e-12 * std::max(1.0, R_.cwiseAbs().maxCoeff()))
        throw MalformedSpec("metric matrix must be symmetric");
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(R_);
    lmin_ = es.eigenvalues().minCoeff();
    lmax_ = es.eigenvalues().maxCoeff();
    if (!(lmin_ > 0.0))
        throw SingularMatrix("metric matrix must be positive definite");
    R_inv_ = R_.llt().solve(Eigen::MatrixXd::Identity(R_.rows(), R_.cols()));
    const Eigen::MatrixXd off = R_ - Eigen::MatrixXd(R_.diagonal().asDiagonal());
    diagonal_ = off.cwiseAbs().maxCoeff() == 0.0;
    scalar_ = diagonal_ && R_.diagonal().maxCoeff() == R_.diagonal().minCoeff();
}

Eigen::VectorXd project_euclidean(const ConstraintSet& set, const Eigen::VectorXd& x) {
    return std::visit(overloaded{
                          [&](const FullSpace&) -> Eigen::VectorXd { return x; },
                          [&](const NonnegativeOrthant&) -> Eigen::VectorXd { return x.cwiseMax(0.0); },
                          [&](const Box& b) -> Eigen::VectorXd { return x.cwiseMax(b.lower).cwiseMin(b.upper); },
                          [&](const Interval& i) -> Eigen::VectorXd {
                              return Eigen::VectorXd::Constant(1, std::clamp(x[0], i.lo, i.hi));
                          },
                          [&](const EuclideanBall& b) -> Eigen::VectorXd {
                              const Eigen::VectorXd d = x - b.center;
                              const double nrm = d.norm();
                              if (nrm <= b.radius)
                                  return x;
                              return b.center + (b.radius / nrm) * d;
                          },
                          [&](const Halfspace& h) -> Eigen::VectorXd {
                              const double viol = h.a.dot(x) - h.b;
                              if (viol <= 0.0)
                                  return x;
                              return x - viol / h.a.squaredNorm() * h.a;
                          },
                      },
                      set.shape());
}

bool has_closed_form(const ConstraintSet& set, const WeightedMetric& metric) {
    return std::visit(overloaded{
                          [&](const FullSpace&) { return true; },
                          [&](const Halfspace&) { return true; },
                          [&](const EuclideanBall&) { return metric.is_scalar(); },
                          [&](const auto&) { return metric.is_diagonal(); },
                      },
                      set.shape());
}

namespace {

Eigen::VectorXd project_iterative(const ConstraintSet& set, const WeightedMetric& metric, const Eigen::VectorXd& x,
                                  const ProjectionOptions& opts) {
    const double step = 1.0 / metric.lambda_max();
    Eigen::VectorXd z = project_euclidean(set, x);
    for (int it = 0; it < opts.max_iter; ++it) {
        Eigen::VectorXd next = project_euclidean(set, z - step * (metric.R() * (z - x)));
        const double diff = (next - z).cwiseAbs().maxCoeff();
        z = std::move(next);
        if (diff < opts.tol)
            return z;
    }
    throw ProjectionNotConverged("weighted projection did not converge within " + std::to_string(opts.max_iter) +
                                 " iterations");
}

}  // namespace

Eigen::VectorXd project(const ConstraintSet& set, const WeightedMetric& metric, const Eigen::VectorXd& x,
                        const ProjectionOptions& opts) {
    if (x.size() != set.dim() || metric.R().rows() != set.dim())
        throw std::invalid_argument("project: dimension mismatch");
    if (std::holds_alternative<Halfspace>(set.shape())) {
        const auto& h = std::get<Halfspace>(set.shape());
        const double viol = h.a.dot(x) - h.b;
        if (viol <= 0.0)
            return x;
        const Eigen::VectorXd Ria = metric.R_inv() * h.a;
        return x - viol / h.a.dot(Ria) * Ria;
    }
    if (has_closed_form(set, metric))
        return project_euclidean(set, x);
    return project_iterative(set, metric, x, opts);
}

Eigen::MatrixXd projection_jacobian(const ConstraintSet& set, const WeightedMetric& metric,
                                    const Eigen::VectorXd& x) {
    const int m = set.dim();
    const Eigen::MatrixXd I = Eigen::MatrixXd::Identity(m, m);
    if (set.is_full())
        return I;
    if (std::holds_alternative<Halfspace>(set.shape())) {
        const auto& h = std::get<Halfspace>(set.shape());
        if (h.a.dot(x) <= h.b)
            return I;
        const Eigen::VectorXd Ria = metric.R_inv() * h.a;
        return I - Ria * h.a.transpose() / h.a.dot(Ria);
    }
    if (has_closed_form(set, metric)) {
        if (std::holds_alternative<EuclideanBall>(set.shape())) {
            const auto& b = std::get<EuclideanBall>(set.shape());
            const Eigen::VectorXd d = x - b.center;
            const double nrm = d.norm();
            if (nrm <= b.radius)
                return I;
            const Eigen::VectorXd u = d / nrm;
            return (b.radius / nrm) * (I - u * u.transpose());
        }
        const Eigen::VectorXd lo = set.lower_bounds(), hi = set.upper_bounds();
        Eigen::MatrixXd J = I;
        for (int i = 0; i < m; ++i)
            if (x[i] < lo[i] || x[i] > hi[i])
                J(i, i) = 0.0;
        return J;
    }
    const double h = 1e-6;
    Eigen::MatrixXd J(m, m);
    for (int j = 0; j < m; ++j) {
        Eigen::VectorXd xp = x, xm = x;
        xp[j] += h;
        xm[j] -= h;
        J.col(j) = (project(set, metric, xp) - project(set, metric, xm)) / (2.0 * h);
    }
    return J;
}

Eigen::VectorXd phi2(const GameSpec& spec, double t, const Eigen::VectorXd& p2, const Eigen::VectorXd& q2) {
    const auto& c = spec.at(t);
    const WeightedMetric metric(c.R2);
    const Eigen::VectorXd pre = -metric.R_inv() * (c.B2.transpose() * p2 + c.D2.transpose() * q2);
    return project(spec.gamma2, metric, pre);
}

Eigen::VectorXd phi1(const GameSpec& spec, double t, const Eigen::VectorXd& p1, const Eigen::VectorXd& q1) {
    const auto& c = spec.at(t);
    const WeightedMetric metric(c.R1);
    const Eigen::VectorXd pre = -metric.R_inv() * (c.B1.transpose() * p1 + c.D1.transpose() * q1);
    return project(spec.gamma1, metric, pre);
}

}  // namespace stackgame

namespace stackgame {

Eigen::MatrixXd project_columns(const ConstraintSet& set, const WeightedMetric& metric, const Eigen::MatrixXd& X) {
    if (set.is_full())
        return X;
    if (set.is_coordinatewise() && metric.is_diagonal()) {
        const Eigen::VectorXd lo = set.lower_bounds(), hi = set.upper_bounds();
        return X.cwiseMax(lo.replicate(1, X.cols())).cwiseMin(hi.replicate(1, X.cols()));
    }
    Eigen::MatrixXd out(X.rows(), X.cols());
    for (Eigen::Index j = 0; j < X.cols(); ++j)
        out.col(j) = project(set, metric, X.col(j));
    return out;
}

Eigen::MatrixXd jacobian_transpose_apply(const ConstraintSet& set, const WeightedMetric& metric,
                                         const Eigen::MatrixXd& X, const Eigen::MatrixXd& G) {
    if (set.is_full())
        return G;
    if (set.is_coordinatewise() && metric.is_diagonal()) {
        const Eigen::VectorXd lo = set.lower_bounds(), hi = set.upper_bounds();
        Eigen::MatrixXd out = G;
        for (Eigen::Index j = 0; j < X.cols(); ++j)
            for (Eigen::Index r = 0; r < X.rows(); ++r)
                if (X(r, j) < lo[r] || X(r, j) > hi[r])
                    out(r, j) = 0.0;
        return out;
    }
    Eigen::MatrixXd out(G.rows(), G.cols());
    for (Eigen::Index j = 0; j < X.cols(); ++j)
        out.col(j) = projection_jacobian(set, metric, X.col(j)).transpose() * G.col(j);
    return out;
}

int count_clamped(const ConstraintSet& set, const WeightedMetric& metric, const Eigen::MatrixXd& X) {
    if (set.is_full())
        return 0;
    int count = 0;
    for (Eigen::Index j = 0; j < X.cols(); ++j) {
        if (set.is_coordinatewise()) {
            const Eigen::VectorXd lo = set.lower_bounds(), hi = set.upper_bounds();
            bool clamped = false;
            for (Eigen::Index r = 0; r < X.rows(); ++r)
                clamped = clamped || X(r, j) < lo[r] || X(r, j) > hi[r];
            count += clamped;
        } else {
            count += !set.contains(X.col(j), 0.0);
        }
    }
    (void)metric;
    return count;
}

}  // namespace stackgame
