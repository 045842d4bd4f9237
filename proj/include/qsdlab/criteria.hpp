#pragma once

#include <optional>
#include <string>

#include "qsdlab/kernel.hpp"
#include "qsdlab/spectral.hpp"

namespace qsdlab {

// ---------------------------------------------------------------------------
// Certificates. Constants are extracted as tight argmax/argmin values with
// witnesses, so every certificate is falsifiable.

/// Local Dobrushin minorization on K: P^{n1}(x, . ∩ K) >= c1 nu(. ∩ K).
struct MinorizationCertificate {
    StateSet K;
    int n1 = 1;
    double c1 = 0;
    Dist nu;
};

class MinorizationFailure : public Error {
public:
    MinorizationFailure(int n1, std::size_t row_zero, std::size_t row_max, std::size_t target)
        : Error("no common minorization at n1=" + std::to_string(n1) + ": rows " +
                std::to_string(row_zero) + " and " + std::to_string(row_max) +
                " have no joint mass on K (seen at target " + std::to_string(target) + ")"),
          row_zero(row_zero), row_max(row_max), target(target) {}
    std::size_t row_zero, row_max, target;
};

/// Two-sided Lyapunov pair: P phi1 <= theta1 phi1 + c2 1_K and P phi2 >= theta2 phi2.
struct LyapunovCertificate {
    StateSet K;
    Eigen::VectorXd phi1;
    double theta1 = 0;
    double c2 = 0;
    Eigen::VectorXd phi2;
    double theta2 = 0;
    bool pass = false;
    std::size_t theta1_witness = 0;  // off-K argmax of P phi1 / phi1
    std::size_t theta2_witness = 0;  // argmin of P phi2 / phi2 over {phi2 > 0}
    Eigen::VectorXd phi1_slack;      // theta1 phi1 + c2 1_K - P phi1  (>= 0 when pass)
    Eigen::VectorXd phi2_slack;      // P phi2 - theta2 phi2          (>= 0 when pass)
};

/// Local Harnack ratio bound: sup_n sup_K survival / inf_K survival <= c3.
struct HarnackReport {
    int horizon = 0;
    double worst_ratio = 1;
    int worst_n = 0;
    std::optional<double> asymptotic_ratio;  // sup_K eta / inf_K eta, when a solution is given
    std::optional<int> stabilization_index;  // first n past which ratio stays within 1% of it
};

class HarnackFailure : public Error {
public:
    HarnackFailure(int n, std::size_t state)
        : Error("survival vanished on K at n=" + std::to_string(n) + " (state " +
                std::to_string(state) + ")"),
          n(n), dead_state(state) {}
    int n;
    std::size_t dead_state;
};

/// Per-state aperiodicity indices n4(x): P_x(X_n in K) > 0 for all n >= n4(x).
struct AperiodicityReport {
    StateSet K;
    int horizon = 0;
    std::vector<std::optional<int>> n4;  // parallel to K.indices(); nullopt = failure marker
    bool all_ok = false;
};

struct DominationResult {
    bool ok = false;
    double C = 0;
    int n0 = 0, m0 = 0;
    std::size_t witness_x = 0, witness_y = 0, witness_z = 0;  // violating triple when !ok
};

struct UniformReport {
    bool ok = false;
    int n4prime = 0;
    double c_underbar = 0;
    double sup_phi1 = 0;
};

// ---------------------------------------------------------------------------
// Continuous time: rate matrices, uniformization, generator drift, condition (F).

/// Conservative-or-killed rate matrix: off-diagonal jump rates plus a
/// per-state killing rate; row sums of the implied generator are <= 0.
class RateMatrix {
public:
    static RateMatrix from_triplets(
        StateSpacePtr space,
        const std::vector<std::tuple<std::size_t, std::size_t, double>>& jump_rates,
        Eigen::VectorXd kill_rates);

    const StateSpacePtr& space() const { return space_; }
    std::size_t size() const { return space_->size(); }
    double jump_rate(std::size_t i, std::size_t j) const;
    double kill_rate(std::size_t i) const { return kill_(static_cast<Eigen::Index>(i)); }
    double total_jump_rate(std::size_t i) const {
        return jump_sums_(static_cast<Eigen::Index>(i));
    }
    double exit_rate(std::size_t i) const {
        return total_jump_rate(i) + kill_(static_cast<Eigen::Index>(i));
    }
    double max_exit_rate() const;

    /// Generator action with the cemetery convention f(cemetery) = 0.
    Eigen::VectorXd apply_generator(const Eigen::VectorXd& f) const;

    template <typename F>
    void for_each_jump(std::size_t i, F&& fn) const {
        for (std::size_t p = offsets_[i]; p < offsets_[i + 1]; ++p) fn(cols_[p], vals_[p]);
    }

private:
    RateMatrix() = default;
    StateSpacePtr space_;
    std::vector<std::size_t> offsets_, cols_;
    std::vector<double> vals_;
    Eigen::VectorXd jump_sums_, kill_;
};

struct GeneratorDriftReport {
    double lambda1 = 0;  // min over x off D0 of -(L phi)(x) / phi(x)
    double C = 0;        // max over D0 of (L phi + lambda1 phi)^+
    bool drift_ok = false;
    std::size_t witness = 0;  // argmin state for lambda1
    std::optional<bool> beats_lambda0;  // lambda1 > supplied lambda0 estimate
};

struct FCertificate {
    StateSet L;
    int t1 = 0, t2 = 0;
    double gamma1 = 0, gamma2 = 0;
    Eigen::VectorXd psi1, psi2;
    double c1 = 0, c2 = 0, c3 = 0;
    bool pass = false;
    std::string failed_line;     // empty when pass
    std::size_t witness = 0;     // state witnessing the failed line
    double growth_at_horizon = 0;  // gamma2^{-t} inf_L P.(X_t in L) at the horizon
};

// ---------------------------------------------------------------------------
// Operations

MinorizationCertificate check_E1(const SubKernel& k, const StateSet& K, int n1);

LyapunovCertificate check_E2(const SubKernel& k, const StateSet& K, const Eigen::VectorXd& phi1,
                             const Eigen::VectorXd& phi2);

struct Phi2Construction {
    Eigen::VectorXd phi2;
    int ell = 0;
};
Phi2Construction construct_phi2(const SubKernel& k, const StateSet& K, double theta2,
                                int horizon = 10000);

struct Phi1Construction {
    Eigen::VectorXd phi1;
    double c2 = 0;
};
Phi1Construction construct_phi1(const SubKernel& k, const StateSet& K, double theta1);

HarnackReport check_E3(const SubKernel& k, const StateSet& K, int horizon,
                       const QsdSolution* sol = nullptr);

AperiodicityReport check_E4(const SubKernel& k, const StateSet& K, int horizon = 10000);

DominationResult check_domination(const SubKernel& k, const StateSet& K, int n0, int m0);

LyapunovCertificate improve_theta2(const SubKernel& k, const LyapunovCertificate& cert,
                                   const QsdSolution& sol, double theta2_new, int horizon = 10000);

double domain_exponent(const LyapunovCertificate& cert);

UniformReport check_uniform(const SubKernel& k, const LyapunovCertificate& cert, int horizon);

GeneratorDriftReport check_generator_lyapunov(const RateMatrix& Q, const Eigen::VectorXd& phi,
                                              const StateSet& D0,
                                              std::optional<double> lambda0_estimate = std::nullopt);

SubKernel uniformize(const RateMatrix& Q, double Lambda);

/// Decay-rate translation under uniformization at rate Lambda.
inline double lambda0_from_theta0(double Lambda, double theta0) { return Lambda * (1.0 - theta0); }

FCertificate check_F(const SubKernel& k, const StateSet& L, const Eigen::VectorXd& psi1, int t2,
                     int horizon, std::optional<double> gamma2 = std::nullopt);

/// Stable-field-order structured text report for a Lyapunov certificate.
std::string certificate_to_json(const LyapunovCertificate& cert);

}  // namespace qsdlab
