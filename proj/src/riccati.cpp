#include "stackgame/riccati.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <sstream>

#include "stackgame/errors.hpp"
#include "stackgame/fbsde.hpp"

namespace stackgame {

namespace {

using Mat = Eigen::MatrixXd;

constexpr double blowup_limit = 1e8;

Mat solve_guarded(const Mat& lhs, const Mat& rhs, const char* what) {
    Eigen::FullPivLU<Mat> lu(lhs);
    if (lu.rcond() < 1e-12)
        throw SingularMatrix(std::string(what) + " is singular (rcond < 1e-12)");
    return lu.solve(rhs);
}

/// Classical RK4 backward in time for dY/dt = -F(t, Y); F is evaluated with the data of each step's midpoint.
std::vector<Mat> integrate_backward(double T, int M, const Mat& terminal,
                                   const std::function<Mat(double, const Mat&)>& F) {
    if (M < 1)
        throw std::invalid_argument("Riccati grid needs at least one step");
    const double h = T / M;
    std::vector<Mat> Y(M + 1);
    Y[M] = terminal;
    for (int k = M; k > 0; --k) {
        const double mid = (k - 0.5) * h;
        const Mat& y = Y[k];
        const Mat k1 = F(mid, y);
        const Mat k2 = F(mid, y + 0.5 * h * k1);
        const Mat k3 = F(mid, y + 0.5 * h * k2);
        const Mat k4 = F(mid, y + h * k3);
        Y[k - 1] = y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        if (!Y[k - 1].allFinite() || Y[k - 1].cwiseAbs().maxCoeff() > blowup_limit) {
            std::ostringstream os;
            os << "Riccati solution escapes near t = " << (k - 1) * h;
            throw BlowUp(os.str(), (k - 1) * h);
        }
    }
    return Y;
}

Mat interpolate(const std::vector<double>& t, const std::vector<Mat>& Y, double s) {
    if (s <= t.front())
        return Y.front();
    if (s >= t.back())
        return Y.back();
    const double h = t[1] - t[0];
    const int k = std::min(static_cast<int>(s / h), static_cast<int>(t.size()) - 2);
    const double w = (s - t[k]) / h;
    return (1.0 - w) * Y[k] + w * Y[k + 1];
}

std::vector<double> uniform_grid(double T, int M) {
    std::vector<double> t(M + 1);
    for (int k = 0; k <= M; ++k)
        t[k] = T * k / M;
    return t;
}

}  // namespace

const AugmentedBlocks& AugmentedSystem::at(double t) const {
    auto it = std::upper_bound(breakpoints.begin(), breakpoints.end(), t);
    std::size_t k = it == breakpoints.begin() ? 0 : static_cast<std::size_t>(it - breakpoints.begin()) - 1;
    return pieces[std::min(k, pieces.size() - 1)];
}

AugmentedSystem build_augmented(const GameSpec& spec) {
    spec.check_dimensions();
    const int n = spec.n;
    AugmentedSystem aug;
    aug.n = n;
    aug.T = spec.T;
    aug.breakpoints = spec.breakpoints;
    auto blocks = [n](const Mat& a, const Mat& b, const Mat& c, const Mat& d) {
        Mat M(2 * n, 2 * n);
        M << a, b, c, d;
        return M;
    };
    const Mat Z = Mat::Zero(n, n);
    for (const auto& c : spec.pieces) {
        Eigen::FullPivLU<Mat> lu1(c.R1), lu2(c.R2);
        if (lu1.rcond() < 1e-12 || lu2.rcond() < 1e-12)
            throw SingularMatrix("R1 or R2 is numerically singular");
        const Mat R1i = lu1.inverse(), R2i = lu2.inverse();
        AugmentedBlocks b;
        b.A = blocks(c.A, Z, Z, c.A);
        b.C = blocks(c.C, Z, Z, c.C);
        b.B1 = blocks(c.B1 * R1i * c.B1.transpose(), c.B2 * R2i * c.B2.transpose(), -c.B2 * R2i * c.B2.transpose(), Z);
        b.B2 = blocks(c.B1 * R1i * c.D1.transpose(), c.B2 * R2i * c.D2.transpose(), -c.B2 * R2i * c.D2.transpose(), Z);
        b.D1 = blocks(c.D1 * R1i * c.B1.transpose(), c.D2 * R2i * c.B2.transpose(), -c.D2 * R2i * c.B2.transpose(), Z);
        b.D2 = blocks(c.D1 * R1i * c.D1.transpose(), c.D2 * R2i * c.D2.transpose(), -c.D2 * R2i * c.D2.transpose(), Z);
        b.Q1 = blocks(c.Q1, -c.Q2, c.Q2, Z);
        aug.pieces.push_back(std::move(b));
    }
    aug.Phi = blocks(spec.Phi1, -spec.Phi2, spec.Phi2, Z);
    aug.X0 = Eigen::VectorXd::Zero(2 * n);
    aug.X0.head(n) = spec.x0;
    return aug;
}

Mat riccati_xi(const AugmentedBlocks& b, const Mat& R) {
    const Mat I = Mat::Identity(R.rows(), R.cols());
    return solve_guarded(I + R * b.D2, R * b.C - R * b.D1 * R, "I + R D2");
}

Mat riccati_pi(const AugmentedBlocks& b, const Mat& R) {
    const Mat Xi = riccati_xi(b, R);
    return b.A.transpose() * R + b.C.transpose() * Xi + b.Q1 + R * (b.A - b.B1 * R - b.B2 * Xi);
}

RiccatiSolution solve_riccati(const AugmentedSystem& aug, int M) {
    RiccatiSolution sol;
    sol.t = uniform_grid(aug.T, M);
    sol.R = integrate_backward(aug.T, M, aug.Phi, [&](double s, const Mat& R) { return riccati_pi(aug.at(s), R); });
    sol.Xi.reserve(M + 1);
    for (int k = 0; k <= M; ++k) {
        const double s = k < M ? sol.t[k] : sol.t[k] - 0.5 * aug.T / M;
        sol.Xi.push_back(riccati_xi(aug.at(s), sol.R[k]));
    }
    return sol;
}

Mat RiccatiSolution::R_at(double s) const { return interpolate(t, R, s); }
Mat RiccatiSolution::Xi_at(double s) const { return interpolate(t, Xi, s); }

UpsilonTransform upsilon_transform(const GameSpec& spec, double tol) {
    if (spec.n != 1 || spec.m1 != 1 || spec.m2 != 1)
        throw AssumptionViolated("the symmetrizing transform is defined for scalar state and controls only");
    // a ratio num/den: 0/0 carries no information, x/0 with x != 0 violates the assumption
    struct Ratio {
        std::string name;
        double num, den;
    };
    std::vector<Ratio> lam, mu;
    for (std::size_t k = 0; k < spec.pieces.size(); ++k) {
        const auto& c = spec.pieces[k];
        const std::string at = " @t=" + std::to_string(spec.breakpoints[k]);
        const double b1 = c.B1(0, 0), b2 = c.B2(0, 0), d1 = c.D1(0, 0), d2 = c.D2(0, 0);
        const double r1 = c.R1(0, 0), r2 = c.R2(0, 0);
        lam.push_back({"Q2/Q1" + at, c.Q2(0, 0), c.Q1(0, 0)});
        mu.push_back({"B2R2^-1B2/B1R1^-1B1" + at, b2 * b2 / r2, b1 * b1 / r1});
        mu.push_back({"B2R2^-1D2/B1R1^-1D1" + at, b2 * d2 / r2, b1 * d1 / r1});
        mu.push_back({"D2R2^-1B2/D1R1^-1B1" + at, d2 * b2 / r2, d1 * b1 / r1});
        mu.push_back({"D2R2^-1D2/D1R1^-1D1" + at, d2 * d2 / r2, d1 * d1 / r1});
    }
    lam.push_back({"Phi2/Phi1", spec.Phi2(0, 0), spec.Phi1(0, 0)});
    auto common = [&](const std::vector<Ratio>& rs, const char* symbol) {
        double value = 0.0;
        bool have = false;
        for (const auto& r : rs) {
            if (r.den == 0.0) {
                if (r.num != 0.0)
                    throw AssumptionViolated(std::string("ratio ") + r.name + " has zero denominator and numerator " +
                                             std::to_string(r.num));
                continue;
            }
            const double q = r.num / r.den;
            if (!have) {
                value = q;
                have = true;
            } else if (std::abs(q - value) > tol) {
                std::ostringstream os;
                os << "ratio " << r.name << " = " << q << " differs from " << symbol << " = " << value << " by "
                   << std::abs(q - value);
                throw AssumptionViolated(os.str());
            }
        }
        return value;
    };
    UpsilonTransform ut;
    ut.lambda = common(lam, "lambda");
    ut.mu = common(mu, "mu");
    ut.Ups << 1.0, -2.0 * ut.mu, 2.0 * ut.lambda, 1.0;
    ut.Ups_inv << 1.0, 2.0 * ut.mu, -2.0 * ut.lambda, 1.0;
    ut.Ups_inv /= 1.0 + 4.0 * ut.lambda * ut.mu;

    const AugmentedSystem aug = build_augmented(spec);
    const Mat U = ut.Ups, Ui = ut.Ups_inv;
    ut.barred = aug;
    auto asym = [](const Mat& M) { return (M - M.transpose()).cwiseAbs().maxCoeff(); };
    auto min_eig = [](const Mat& M) {
        Eigen::SelfAdjointEigenSolver<Mat> es(0.5 * (M + M.transpose()), Eigen::EigenvaluesOnly);
        return es.eigenvalues().minCoeff();
    };
    ut.min_eig_Q = std::numeric_limits<double>::infinity();
    for (auto& b : ut.barred.pieces) {
        b.B1 = b.B1 * U;
        b.B2 = b.B2 * U;
        b.D1 = b.D1 * U;
        b.D2 = b.D2 * U;
        b.Q1 = Ui * b.Q1;
        ut.max_asymmetry = std::max({ut.max_asymmetry, asym(b.B1), asym(b.B2), asym(b.D1), asym(b.D2), asym(b.Q1)});
        ut.min_eig_Q = std::min(ut.min_eig_Q, min_eig(b.Q1));
    }
    ut.barred.Phi = Ui * aug.Phi;
    ut.max_asymmetry = std::max(ut.max_asymmetry, asym(ut.barred.Phi));
    ut.min_eig_Phi = min_eig(ut.barred.Phi);
    if (ut.max_asymmetry > 1e-10)
        throw AssumptionViolated("transformed matrices are not symmetric (max asymmetry " +
                                 std::to_string(ut.max_asymmetry) + ")");
    if (ut.min_eig_Q < -1e-10 || ut.min_eig_Phi < -1e-10)
        throw AssumptionViolated("transformed weights are not positive semidefinite");
    return ut;
}

SymmetrizedRiccati solve_symmetrized_riccati(const UpsilonTransform& ut, int M) {
    SymmetrizedRiccati out;
    out.bar = solve_riccati(ut.barred, M);
    out.mapped.t = out.bar.t;
    const Mat U = ut.Ups;
    for (std::size_t k = 0; k < out.bar.R.size(); ++k) {
        out.mapped.R.push_back(U * out.bar.R[k]);
        out.mapped.Xi.push_back(U * out.bar.Xi[k]);
    }
    return out;
}

TangRiccatiSolution solve_tang_riccati(const Mat& A, const Mat& B, const Mat& C, const Mat& D, const Mat& Q,
                                       const Mat& N, const Mat& M, double T, int grid) {
    const auto n = A.rows();
    if (B.rows() != n || C.rows() != n || D.rows() != n || Q.rows() != n || M.rows() != n || N.rows() != B.cols() ||
        D.cols() != B.cols())
        throw MalformedSpec("Tang Riccati data have inconsistent shapes");
    Eigen::LLT<Mat> llt(N);
    if (llt.info() != Eigen::Success)
        throw SingularMatrix("N must be positive definite");
    const Mat Ni = llt.solve(Mat::Identity(N.rows(), N.cols()));
    const Mat I = Mat::Identity(n, n);
    auto Zof = [&](const Mat& K) {
        return solve_guarded(I + K * D * Ni * D.transpose(), K * C - K * D * Ni * B.transpose() * K, "I + K D N^-1 D'");
    };
    auto K1 = [&](double, const Mat& K) {
        const Mat Z = Zof(K);
        return Mat(A.transpose() * K + C.transpose() * Z + Q + K * A - K * B * Ni * B.transpose() * K -
                   K * B * Ni * D.transpose() * Z);
    };
    TangRiccatiSolution sol;
    sol.t = uniform_grid(T, grid);
    sol.K = integrate_backward(T, grid, M, K1);
    for (const auto& K : sol.K)
        sol.Z.push_back(Zof(K));
    sol.B = B;
    sol.D = D;
    sol.N = N;
    return sol;
}

Mat TangRiccatiSolution::gain(int k) const {
    return -N.llt().solve(B.transpose() * K[k] + D.transpose() * Z[k]);
}

Mat TangRiccatiSolution::gain_at(double s) const {
    const Mat Kt = K_at(s);
    const Mat Zt = interpolate(t, Z, s);
    return -N.llt().solve(B.transpose() * Kt + D.transpose() * Zt);
}

Mat TangRiccatiSolution::K_at(double s) const { return interpolate(t, K, s); }

DualityError duality_error(const Lattice& lattice, const FbsdeSolution& sol, const RiccatiSolution& ric) {
    DualityError e;
    const int n = sol.x.dim();
    for (int i = 0; i <= lattice.N(); ++i) {
        const Mat R = ric.R_at(lattice.time(i)), Xi = ric.Xi_at(lattice.time(i));
        for (int j = 0; j < lattice.nodes(i); ++j) {
            Eigen::VectorXd X(2 * n), P(2 * n);
            X << sol.x.at(i, j), sol.k.at(i, j);
            P << sol.p1.at(i, j), sol.p2.at(i, j);
            e.P = std::max(e.P, (P - R * X).norm());
            if (i < lattice.N()) {
                Eigen::VectorXd Q(2 * n);
                Q << sol.q1.at(i, j), sol.q2.at(i, j);
                e.Q = std::max(e.Q, (Q - Xi * X).norm());
            }
        }
    }
    return e;
}

}  // namespace stackgame
