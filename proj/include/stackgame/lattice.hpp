#pragma once

#include <Eigen/Dense>
#include <vector>

namespace stackgame {

enum class Layout {
    Recombining,  // node (i,j) -> (i+1,j) down, (i+1,j+1) up
    Full,         // node (i,j) -> (i+1,2j) down, (i+1,2j+1) up
};

/// Binomial discretization of W on [0,T]: increments ±sqrt(dt) with probability 1/2.
class Lattice {
public:
    static constexpr int max_full_steps = 16;

    Lattice(double T, int N, Layout layout = Layout::Recombining);

    int N() const { return N_; }
    double T() const { return T_; }
    double dt() const { return dt_; }
    double sqrt_dt() const { return sqrt_dt_; }
    Layout layout() const { return layout_; }
    double time(int i) const { return i * dt_; }

    int nodes(int i) const;
    int down(int /*i*/, int j) const { return layout_ == Layout::Full ? 2 * j : j; }
    int up(int /*i*/, int j) const { return layout_ == Layout::Full ? 2 * j + 1 : j + 1; }
    /// Probability of reaching node (i,j).
    double weight(int i, int j) const;
    /// Brownian value W(t_i) at node (i,j).
    double brownian(int i, int j) const;
    /// Total number of nodes on layers 0..N-1.
    int interior_nodes() const;

private:
    double T_;
    int N_;
    double dt_, sqrt_dt_;
    Layout layout_;
    std::vector<std::vector<double>> weights_;
};

/// One vector of fixed dimension per lattice node; layer i is a dim x nodes(i) matrix.
class NodeProcess {
public:
    NodeProcess() = default;
    NodeProcess(const Lattice& lattice, int dim);

    int dim() const { return dim_; }
    int layers() const { return static_cast<int>(values_.size()); }
    Eigen::MatrixXd& layer(int i) { return values_[i]; }
    const Eigen::MatrixXd& layer(int i) const { return values_[i]; }
    auto at(int i, int j) { return values_[i].col(j); }
    auto at(int i, int j) const { return values_[i].col(j); }

    /// Sup norm over all nodes of layers [first, last].
    double sup_norm(int first = 0, int last = -1) const;
    double sup_distance(const NodeProcess& o, int first = 0, int last = -1) const;

private:
    int dim_ = 0;
    std::vector<Eigen::MatrixXd> values_;
};

/// E[proc(i+1) | node (i,j)] for every j.
Eigen::MatrixXd conditional_expectation(const NodeProcess& proc, const Lattice& lattice, int i);

/// (proc(up) - proc(down)) / (2 sqrt(dt)) for every node of layer i.
Eigen::MatrixXd martingale_integrand(const NodeProcess& proc, const Lattice& lattice, int i);

/// Probability-weighted mean of a layer.
Eigen::VectorXd layer_mean(const Eigen::MatrixXd& layer, const Lattice& lattice, int i);

}  // namespace stackgame
