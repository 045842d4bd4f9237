#pragma once

#include <functional>
#include <optional>
#include <vector>

#include <Eigen/Dense>

#include "qsdlab/errors.hpp"

namespace qsdlab::diffusion1d {

/// dX = b(X) dt + sigma(X) dB on (alpha, beta), killed at rate kappa and sent
/// to the cemetery on hitting a boundary.
struct Diffusion1dSpec {
    std::function<double(double)> drift;
    std::function<double(double)> sigma;
    std::function<double(double)> kappa;
    double alpha = 0, beta = 1;  // +-infinity allowed
    double alpha0 = 0.5;         // reference point for the scale integrals
};

struct ScaleResult {
    double s = 0, delta = 0;
    double s_error = 0, delta_error = 0;  // quadrature error estimates
};

/// Natural scale s(x) = int_{alpha0}^x exp(-2 int_{alpha0}^u b/sigma^2) du and
/// its density delta.
ScaleResult scale(const Diffusion1dSpec& spec, double x);

enum class Side { Lower, Upper };
enum class Reachability { Reachable, Unreachable, Inconclusive };

struct ReachReport {
    Reachability verdict = Reachability::Inconclusive;
    bool scale_finite = false;       // s stays finite at the boundary
    double scale_limit = 0;          // s(boundary+-) when finite
    bool integral_finite = false;    // second reachability integral converges
    double integral = 0;             // its value when finite
    int shells_used = 0;
};

/// Dyadic-cascade test of the two boundary-reachability integrals.
ReachReport reachable(const Diffusion1dSpec& spec, Side side);

/// First eigenvalue upper bound from the sine test function in natural scale.
double lambda0_bound_1(const Diffusion1dSpec& spec, double a, double b, int grid = 512);

/// Second bound; requires b/sigma^2 differentiable on [a,b].
double lambda0_bound_2(const Diffusion1dSpec& spec, double a, double b, int grid = 512);

class DerivativeInstability : public Error {
public:
    DerivativeInstability(double x, double disagreement)
        : Error("numerical derivative unstable at x=" + std::to_string(x) + " (two-step relative "
                "disagreement " + std::to_string(disagreement) + ")"),
          x(x), disagreement(disagreement) {}
    double x, disagreement;
};

enum class PhiKind { SqrtScale, ExpPotential };

struct DriftPoint {
    double x = 0;
    double coefficient = 0;  // the -lambda1 candidate rate at x
};

struct PhiCandidate {
    std::function<double(double)> phi;
    std::vector<DriftPoint> report;
};

/// Lyapunov candidates: sqrt(+-s) outside [a_minus, a_plus], or the
/// exponential of the drift potential.
PhiCandidate phi_candidates(const Diffusion1dSpec& spec, PhiKind kind, double a_minus, double a0,
                            double a_plus);

enum class ConditionLabel { I, II, III, None };

struct ConditionSelection {
    ConditionLabel label = ConditionLabel::None;
    double lambda1 = 0;  // achieved drift rate on the checked region
    double margin = 0;   // lambda1 - lambda0 estimate
};

/// Picks the first satisfied hypothesis among: (i) both boundaries reachable;
/// (ii) lower reachable + drift inequality beyond x1; (iii) drift inequality
/// on both tails. lambda0_estimate normally comes from fd_eigen.
ConditionSelection select_condition(const Diffusion1dSpec& spec,
                                    const std::function<double(double)>& phi, double x0, double x1,
                                    double lambda0_estimate);

struct FdEigenResult {
    double lambda0 = 0;      // Richardson-extrapolated across mesh and mesh/2
    double lambda0_raw = 0;  // at the requested mesh
    Eigen::VectorXd density;  // invariant (left) eigenfunction, cell masses summing to 1
    Eigen::VectorXd xs;       // interior nodes
};

/// Independent oracle: second-order finite-difference Sturm-Liouville problem
/// with Dirichlet ends and killing potential, solved by inverse power iteration.
FdEigenResult fd_eigen(const Diffusion1dSpec& spec, double a, double b, int mesh);

}  // namespace qsdlab::diffusion1d
