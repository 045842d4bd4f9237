#pragma once

#include <functional>
#include <optional>

#include "qsdlab/criteria.hpp"

namespace qsdlab::models {

/// Mass leaving a truncation window is killed (sent to the cemetery), never
/// reflected; every builder below follows that policy and reports the
/// quasi-stationary overflow mass as a truncation diagnostic where relevant.

// ---------------------------------------------------------------------------
// Multitype birth-death processes

struct MultiBDSpec {
    int dimension = 1;
    std::function<double(const std::vector<int>&, int)> birth;  // b_i(x)
    std::function<double(const std::vector<int>&, int)> death;  // d_i(x)
    std::function<bool(const std::vector<int>&)> domain;        // default: |x| >= 1
    int radius = 0;                                             // truncation: |x|_1 <= radius
    bool discrete_time = false;  // rates are one-step probabilities instead
};

struct DriftShellTrace {
    std::vector<int> shell;            // |x| values
    std::vector<double> ratio;         // min over shell of sum_i (d_i - b_i) / |x|
    std::vector<double> gap;           // min over shell of sum_i (d_i - delta b_i)
    double delta = 2.0;
    bool condition_ratio_grows = false;  // (d-b)/|x| -> infinity regime
    bool condition_gap_grows = false;    // d - delta b -> infinity regime
};

struct MultiBDBuild {
    std::optional<RateMatrix> generator;  // continuous mode
    std::optional<SubKernel> kernel;      // discrete mode
    std::vector<std::vector<int>> coords;
    DriftShellTrace drift;
};

MultiBDBuild build_multitype_bd(const MultiBDSpec& spec);

// ---------------------------------------------------------------------------
// Multitype Galton-Watson processes

struct OffspringLaw {
    std::vector<std::pair<std::vector<int>, double>> atoms;  // offspring vector, probability
};

struct GWSpec {
    int types = 1;
    std::vector<OffspringLaw> offspring;  // one law per parent type
    int truncation = 100;                 // total population cap
};

struct GWBuild {
    SubKernel kernel;
    Eigen::MatrixXd mean_matrix;
    double rho = 0;
    Eigen::VectorXd v;  // positive right eigenvector of the mean matrix
    bool supercritical = false;
    std::vector<std::vector<int>> coords;  // state -> population vector
};

GWBuild build_galton_watson(const GWSpec& spec);

// ---------------------------------------------------------------------------
// Perturbed dynamical systems X_{n+1} = f(X_n) + xi_n on a gridded domain

enum class NoiseKind { GaussianDiag, UniformBall };

struct PerturbedDSSpec {
    int dim = 1;
    std::function<std::vector<double>(const std::vector<double>&)> map;
    NoiseKind noise = NoiseKind::GaussianDiag;
    std::vector<double> sigma;  // per-axis standard deviations (Gaussian)
    double ball_radius = 1.0;   // uniform-on-ball radius
    std::function<bool(const std::vector<double>&)> domain;  // default: everything
    std::vector<double> box_lo, box_hi;
    std::vector<int> resolution;  // cells per axis
};

SubKernel build_perturbed_ds(const PerturbedDSSpec& spec);

struct ShellRatioReport {
    std::vector<double> radii;
    std::vector<double> max_ratio;  // per-shell max of E phi(f(x)+xi) / phi(x)
    bool decreasing = false;
    double last = 0;
};

/// One-step drift ratios of phi on radial shells, by quadrature against the
/// noise law (independent of the grid truncation).
ShellRatioReport verify_perturbed_lyapunov(
    const PerturbedDSSpec& spec, const std::function<double(const std::vector<double>&)>& phi,
    const std::vector<double>& shells);

// ---------------------------------------------------------------------------
// Euler scheme for an absorbed 1-d diffusion, with optional bridge correction

struct EulerDiffusionSpec {
    std::function<double(double)> drift, sigma, kappa;
    double alpha, beta;  // domain endpoints; +-infinity allowed
    double grid_lo, grid_hi;
    double dt = 1e-3;
    int cells = 200;
    bool bridge = true;
};

struct EulerBuild {
    SubKernel kernel;
    long bridge_clamps = 0;  // exponent clamps from dt*sigma^2 underflow
    double cell_width = 0;
};

EulerBuild build_euler_absorbed(const EulerDiffusionSpec& spec);

// ---------------------------------------------------------------------------
// Two-sided-estimate base kernel with multiplicative penalization

struct PenalizedSpec {
    SubKernel base;  // Q, verified against g/zeta/C below
    Eigen::VectorXd g;
    Dist zeta;
    double C = 1;
    std::function<double(std::size_t, std::size_t)> penalty;  // p(x,y) in (0,1]
    std::vector<StateSet> exhaustion;                         // L_k
};

struct PenalizedBuild {
    SubKernel kernel;
    std::vector<double> inf_penalty;  // inf over L_k x L_k of p
    double C = 1;
    bool bounded_reduction_consistent = false;  // p' = p/(sup p + 1) gives the same
                                                // conditional evolution (checked at n = 3)
};

PenalizedBuild build_penalized(const PenalizedSpec& spec);

// ---------------------------------------------------------------------------
// Reducible three-set chains D1 -> D2 -> D3 -> cemetery

struct ThreeSetSpec {
    Eigen::MatrixXd d1, d2, d3;     // diagonal blocks
    Eigen::MatrixXd d12, d13, d23;  // cross blocks along the flow
    double gamma = 0.5;             // exponential-moment rate for the exit times
};

struct ThreeSetBuild {
    SubKernel kernel;
    StateSet D1, D2, D3;
    SubKernel y_kernel;  // the D2-restricted chain
    double theta0_Y = 0;
    bool gamma_below_theta0Y = false;
    double moment_entry = 0;  // sup over D1 of E(gamma^{-T_{D2}}; T_{D2} first)
    double moment_exit = 0;   // sup over D1 of E(gamma^{-T_{D3} ^ tau}; D2 avoided)
    double moment_tail = 0;   // sup over D3 of E(gamma^{-tau})
    bool moments_finite = false;
};

ThreeSetBuild build_three_set(const ThreeSetSpec& spec);

/// Validates the block-zero pattern of an assembled kernel against a
/// partition; throws when a forbidden block carries positive mass.
void check_three_set_pattern(const SubKernel& k, const StateSet& D1, const StateSet& D2,
                             const StateSet& D3);

// ---------------------------------------------------------------------------
// Vitality-with-aging model: N a Poisson clock, Y a modulated birth-death

struct VitalitySpec {
    std::function<double(int)> metabolic;  // f(n), n >= 1
    std::function<double(int)> birth;      // b(y), y >= 1
    std::function<double(int)> death;      // d(y), y >= 1
    int n_max = 10, y_max = 30;
};

struct VitalityBuild {
    std::optional<RateMatrix> generator;
    std::vector<std::pair<int, int>> coords;  // state -> (n, y)
    int n0 = 1;
    double f_min = 0;
    double lambda0_Z = 0;
    double liminf_f_tail = 0;  // min f over the last n-shell of the truncation
    bool hypothesis = false;   // liminf f > f(n0) + 1/lambda0_Z
    bool lambda0Z_below_d1 = false;
};

VitalityBuild build_vitality(const VitalitySpec& spec);

// ---------------------------------------------------------------------------
// Shared enumeration helper: population vectors with 1 <= |z| <= cap, ordered
// by total size then lexicographically.
std::vector<std::vector<int>> enumerate_population_states(int dim, int cap);

}  // namespace qsdlab::models
