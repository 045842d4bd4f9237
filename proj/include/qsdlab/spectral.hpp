#pragma once

#include <complex>
#include <optional>
#include <string>

#include "qsdlab/kernel.hpp"

namespace qsdlab {

/// The quasi-stationary triple: survival decay rate theta0, the distribution
/// nu with nu P = theta0 nu, and the right eigenfunction eta = lim theta0^-n
/// P_x(n < absorption), which is positive exactly on the survivor set E'.
struct QsdSolution {
    double theta0 = 0;
    Dist nu;
    Eigen::VectorXd eta;
    StateSet e_prime;
    std::vector<std::size_t> dominant_class;
    int iterations = 0;
    double left_residual = 0;
    double right_residual = 0;
};

QsdSolution solve_qsd(const SubKernel& k, double tol = 1e-12, int max_iter = 100000,
                      std::optional<std::size_t> class_hint_state = std::nullopt);

/// Structured text document (JSON) with theta0, nu, eta, e_prime, residuals.
std::string solution_to_json(const QsdSolution& sol);

/// The chain conditioned to never be absorbed: h-transform of the kernel by
/// eta, restricted to E', with invariant law beta = eta * nu.
struct QProcess {
    SubKernel tilde_kernel;                 // stochastic, on the E' subspace
    Dist beta;                              // on the E' subspace
    std::vector<std::size_t> global_index;  // E' position -> original state
};
QProcess q_process(const SubKernel& k, const QsdSolution& sol);

/// Empirical geometric fit of the conditional total-variation decay.
struct ConvergenceFit {
    int horizon = 0;
    std::vector<double> tv_series;  // tv_series[n] = ||law_n - nu||_TV, n = 0..horizon
    double alpha_hat = 0;
    double c_hat = 0;
    double r_squared = 0;
    int burn_in = 0;  // first index with tv < 1
    bool exact = false;
};
ConvergenceFit fit_convergence(const SubKernel& k, const Dist& mu, const QsdSolution& sol,
                               int horizon);

/// Common convergence radius 1/lim P^n(x,y)^{1/n}; equals 1/theta0 on a
/// primitive kernel. Ratio-extrapolated at the horizon.
double estimate_R(const SubKernel& k, std::size_t x, std::size_t y, int horizon);

/// Four-way classification of eigenfunctions of the cemetery-extended kernel.
enum class EigenfunctionCase {
    Constant = 1,     // h(cemetery) != 0, a.s. absorption: h is constant
    EtaMultiple = 2,  // nu(h) != 0: h = nu(h) eta and theta = theta0
    Subdominant = 3,  // nu(h) = 0, h not identically 0 on E'
    OffSurvivor = 4,  // h = 0 on all of E'
};

struct EigenpairReport {
    EigenfunctionCase label;
    double residual = 0;          // eigen-equation residual actually observed
    std::complex<double> nu_h{};  // nu(h)
    double modulus_ratio = 0;     // |theta| / theta0
    bool theta_matches_theta0 = false;
    bool h_matches_eta = false;     // case 2: h == nu(h) eta within tol
    bool growth_checked = false;    // growth bound evaluated (phi1 supplied, |theta|>theta1)
    double growth_constant = 0;     // max over E' of |h| / phi1^{log|theta|/log theta1}
};

EigenpairReport classify_eigenpair(const SubKernel& k, const Eigen::VectorXcd& h,
                                   std::complex<double> h_at_cemetery, std::complex<double> theta,
                                   const QsdSolution& sol, double tol = 1e-8,
                                   const Eigen::VectorXd* phi1 = nullptr, double theta1 = 0.0);

}  // namespace qsdlab
