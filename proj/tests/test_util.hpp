#pragma once
#include <Eigen/Eigenvalues>

#include <random>
#include <vector>

#include "qsdlab/kernel.hpp"

namespace qsdlab::testutil {

/// The running 2x2 reference kernel used across the suites.
inline SubKernel reference_2x2() {
    Eigen::MatrixXd m(2, 2);
    m << 0.5, 0.2, 0.3, 0.4;
    return SubKernel::from_dense(StateSpace::with_size(2), m);
}

/// Closed-form eigendata of a 2x2 matrix (quadratic formula), independent of
/// any library eigensolver. Returns (lambda_max, lambda_min).
inline std::pair<double, double> eigenvalues_2x2(const Eigen::MatrixXd& m) {
    double tr = m(0, 0) + m(1, 1);
    double det = m(0, 0) * m(1, 1) - m(0, 1) * m(1, 0);
    double disc = std::sqrt(tr * tr / 4.0 - det);
    return {tr / 2.0 + disc, tr / 2.0 - disc};
}

/// Left Perron vector of a 2x2 nonnegative matrix, normalized to sum 1.
inline Eigen::Vector2d left_perron_2x2(const Eigen::MatrixXd& m) {
    auto [lam, lam2] = eigenvalues_2x2(m);
    // u (M - lam I) = 0  =>  u1 (m00-lam) + u2 m10 = 0
    Eigen::Vector2d u;
    if (std::abs(m(1, 0)) > 1e-15) {
        u << 1.0, (lam - m(0, 0)) / m(1, 0);
    } else {
        u << 0.0, 1.0;
    }
    return u / u.sum();
}

/// Random strictly positive substochastic kernel (hence primitive).
inline SubKernel random_primitive_kernel(std::mt19937_64& rng, std::size_t n) {
    std::uniform_real_distribution<double> unif(0.02, 1.0);
    Eigen::MatrixXd m(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        double rowsum = 0;
        for (Eigen::Index j = 0; j < m.cols(); ++j) {
            m(i, j) = unif(rng);
            rowsum += m(i, j);
        }
        // scale to a random row mass in (0.3, 1)
        double target = 0.3 + 0.7 * unif(rng);
        for (Eigen::Index j = 0; j < m.cols(); ++j) m(i, j) *= target / rowsum;
    }
    return SubKernel::from_dense(StateSpace::with_size(n), m);
}

/// Random sparse substochastic kernel; may be reducible.
inline SubKernel random_sparse_kernel(std::mt19937_64& rng, std::size_t n, double fill = 0.3) {
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    std::vector<std::tuple<std::size_t, std::size_t, double>> trip;
    for (std::size_t i = 0; i < n; ++i) {
        std::vector<double> w;
        std::vector<std::size_t> js;
        for (std::size_t j = 0; j < n; ++j)
            if (unif(rng) < fill) {
                js.push_back(j);
                w.push_back(unif(rng));
            }
        double s = 0;
        for (double v : w) s += v;
        if (s <= 0) continue;
        double target = 0.2 + 0.8 * unif(rng);
        for (std::size_t q = 0; q < js.size(); ++q) trip.emplace_back(i, js[q], w[q] * target / s);
    }
    return SubKernel::from_triplets(StateSpace::with_size(n), trip);
}

/// Full-spectrum QR eigensolve oracle for desk-scale kernels: returns
/// (theta0, nu summing to 1, eta with nu(eta) = 1).
struct DenseOracle {
    double theta0;
    Eigen::VectorXd nu, eta;
    double lambda2_modulus;  // second-largest eigenvalue modulus
};

inline DenseOracle dense_eigen_oracle(const SubKernel& k) {
    Eigen::MatrixXd m = k.dense();
    Eigen::EigenSolver<Eigen::MatrixXd> right(m);
    Eigen::EigenSolver<Eigen::MatrixXd> left(m.transpose());

    auto pick_perron = [](const Eigen::EigenSolver<Eigen::MatrixXd>& es) {
        Eigen::Index best = 0;
        double best_re = -1e300;
        for (Eigen::Index i = 0; i < es.eigenvalues().size(); ++i) {
            double re = es.eigenvalues()(i).real();
            double im = std::abs(es.eigenvalues()(i).imag());
            if (im < 1e-9 && re > best_re) {
                best_re = re;
                best = i;
            }
        }
        return best;
    };

    DenseOracle o;
    Eigen::Index ir = pick_perron(right), il = pick_perron(left);
    o.theta0 = right.eigenvalues()(ir).real();
    Eigen::VectorXd eta = right.eigenvectors().col(ir).real();
    Eigen::VectorXd nu = left.eigenvectors().col(il).real();
    if (eta.sum() < 0) eta = -eta;
    if (nu.sum() < 0) nu = -nu;
    nu /= nu.sum();
    eta /= nu.dot(eta);
    o.nu = nu;
    o.eta = eta;

    o.lambda2_modulus = 0;
    for (Eigen::Index i = 0; i < right.eigenvalues().size(); ++i) {
        double mod = std::abs(right.eigenvalues()(i));
        if (std::abs(mod - o.theta0) > 1e-9 * std::max(1.0, o.theta0))
            o.lambda2_modulus = std::max(o.lambda2_modulus, mod);
    }
    return o;
}

inline Dist random_dist(std::mt19937_64& rng, const StateSpacePtr& sp) {
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    Eigen::VectorXd w(static_cast<Eigen::Index>(sp->size()));
    for (Eigen::Index i = 0; i < w.size(); ++i) w(i) = unif(rng) + 1e-9;
    w /= w.sum();
    return Dist(sp, w);
}

}  // namespace qsdlab::testutil
