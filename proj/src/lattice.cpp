#include "stackgame/lattice.hpp"

#include <cmath>
#include <stdexcept>

namespace stackgame {

Lattice::Lattice(double T, int N, Layout layout)
    : T_(T), N_(N), dt_(T / N), sqrt_dt_(std::sqrt(T / N)), layout_(layout) {
    if (!(T > 0.0) || N < 1)
        throw std::invalid_argument("lattice needs T > 0 and N >= 1");
    if (layout == Layout::Full && N > max_full_steps)
        throw std::invalid_argument("full binomial tree is capped at N = " + std::to_string(max_full_steps));
    weights_.resize(N + 1);
    if (layout == Layout::Recombining) {
        weights_[0] = {1.0};
        for (int i = 1; i <= N; ++i) {
            weights_[i].assign(i + 1, 0.0);
            for (int j = 0; j < i; ++j) {
                weights_[i][j] += 0.5 * weights_[i - 1][j];
                weights_[i][j + 1] += 0.5 * weights_[i - 1][j];
            }
        }
    }
}

int Lattice::nodes(int i) const { return layout_ == Layout::Full ? (1 << i) : i + 1; }

double Lattice::weight(int i, int j) const {
    if (layout_ == Layout::Full)
        return std::ldexp(1.0, -i);
    return weights_[i][j];
}

double Lattice::brownian(int i, int j) const {
    if (layout_ == Layout::Recombining)
        return (2 * j - i) * sqrt_dt_;
    return (2 * __builtin_popcount(static_cast<unsigned>(j)) - i) * sqrt_dt_;
}

int Lattice::interior_nodes() const {
    int total = 0;
    for (int i = 0; i < N_; ++i)
        total += nodes(i);
    return total;
}

NodeProcess::NodeProcess(const Lattice& lattice, int dim) : dim_(dim) {
    values_.reserve(lattice.N() + 1);
    for (int i = 0; i <= lattice.N(); ++i)
        values_.emplace_back(Eigen::MatrixXd::Zero(dim, lattice.nodes(i)));
}

double NodeProcess::sup_norm(int first, int last) const {
    if (last < 0)
        last = layers() - 1;
    double s = 0.0;
    for (int i = first; i <= last; ++i)
        if (values_[i].size() > 0)
            s = std::max(s, values_[i].cwiseAbs().maxCoeff());
    return s;
}

double NodeProcess::sup_distance(const NodeProcess& o, int first, int last) const {
    if (last < 0)
        last = layers() - 1;
    double s = 0.0;
    for (int i = first; i <= last; ++i)
        if (values_[i].size() > 0)
            s = std::max(s, (values_[i] - o.values_[i]).cwiseAbs().maxCoeff());
    return s;
}

namespace {

using Strided = Eigen::Map<const Eigen::MatrixXd, 0, Eigen::OuterStride<>>;

Strided full_down(const Eigen::MatrixXd& next, int nodes) {
    return Strided(next.data(), next.rows(), nodes, Eigen::OuterStride<>(2 * next.rows()));
}

Strided full_up(const Eigen::MatrixXd& next, int nodes) {
    return Strided(next.data() + next.rows(), next.rows(), nodes, Eigen::OuterStride<>(2 * next.rows()));
}

}  // namespace

Eigen::MatrixXd conditional_expectation(const NodeProcess& proc, const Lattice& lattice, int i) {
    const auto& next = proc.layer(i + 1);
    if (lattice.layout() == Layout::Full)
        return 0.5 * (full_down(next, lattice.nodes(i)) + full_up(next, lattice.nodes(i)));
    Eigen::MatrixXd out(proc.dim(), lattice.nodes(i));
    for (int j = 0; j < lattice.nodes(i); ++j)
        out.col(j) = 0.5 * (next.col(lattice.down(i, j)) + next.col(lattice.up(i, j)));
    return out;
}

Eigen::MatrixXd martingale_integrand(const NodeProcess& proc, const Lattice& lattice, int i) {
    const auto& next = proc.layer(i + 1);
    const double scale = 1.0 / (2.0 * lattice.sqrt_dt());
    if (lattice.layout() == Layout::Full)
        return scale * (full_up(next, lattice.nodes(i)) - full_down(next, lattice.nodes(i)));
    Eigen::MatrixXd out(proc.dim(), lattice.nodes(i));
    for (int j = 0; j < lattice.nodes(i); ++j)
        out.col(j) = scale * (next.col(lattice.up(i, j)) - next.col(lattice.down(i, j)));
    return out;
}

Eigen::VectorXd layer_mean(const Eigen::MatrixXd& layer, const Lattice& lattice, int i) {
    Eigen::VectorXd m = Eigen::VectorXd::Zero(layer.rows());
    for (int j = 0; j < lattice.nodes(i); ++j)
        m += lattice.weight(i, j) * layer.col(j);
    return m;
}

}  // namespace stackgame
