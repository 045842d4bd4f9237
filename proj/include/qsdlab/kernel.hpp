#pragma once

#include <Eigen/Dense>
#include <iosfwd>
#include <tuple>
#include <vector>

#include "qsdlab/graph.hpp"
#include "qsdlab/state_space.hpp"

namespace qsdlab {

/// Probability distribution (or sub-distribution) on a finite state space.
class Dist {
public:
    Dist(StateSpacePtr space, Eigen::VectorXd weights);

    static Dist dirac(StateSpacePtr space, std::size_t state);
    static Dist uniform(StateSpacePtr space);

    const StateSpacePtr& space() const { return space_; }
    const Eigen::VectorXd& weights() const { return weights_; }
    double weight(std::size_t i) const { return weights_(static_cast<Eigen::Index>(i)); }
    std::size_t size() const { return static_cast<std::size_t>(weights_.size()); }

    double total_mass() const { return weights_.sum(); }
    bool is_probability(double tol = 1e-12) const;

    /// Integral of f against the distribution.
    double integrate(const Eigen::VectorXd& f) const;

private:
    StateSpacePtr space_;
    Eigen::VectorXd weights_;
};

/// Row-substochastic transition matrix on a finite indexed state space.
/// Absorption is the row mass deficit. Immutable after construction.
class SubKernel {
public:
    enum class Storage { Dense, Sparse };

    static SubKernel from_dense(StateSpacePtr space, const Eigen::MatrixXd& rows);
    static SubKernel from_triplets(StateSpacePtr space,
                                   const std::vector<std::tuple<std::size_t, std::size_t, double>>& entries);

    const StateSpacePtr& space() const { return space_; }
    std::size_t size() const { return n_; }
    Storage storage() const { return storage_; }
    std::size_t nnz() const { return cols_.size(); }
    double density() const { return n_ ? static_cast<double>(nnz()) / (static_cast<double>(n_) * n_) : 0.0; }

    double entry(std::size_t i, std::size_t j) const;
    double row_sum(std::size_t i) const { return row_sums_(static_cast<Eigen::Index>(i)); }
    const Eigen::VectorXd& row_sums() const { return row_sums_; }
    double absorption(std::size_t i) const { return 1.0 - row_sum(i); }

    /// Left action mu -> mu P.
    Eigen::VectorXd apply_left(const Eigen::VectorXd& mu) const;
    /// Right action f -> P f.
    Eigen::VectorXd apply_right(const Eigen::VectorXd& f) const;

    template <typename F>
    void for_each_in_row(std::size_t i, F&& fn) const {
        for (std::size_t p = offsets_[i]; p < offsets_[i + 1]; ++p) fn(cols_[p], vals_[p]);
    }

    /// Digraph of strictly positive entries.
    graph::Adjacency adjacency() const;

    Eigen::MatrixXd dense() const;
    Eigen::MatrixXd dense_block(const std::vector<std::size_t>& rows,
                                const std::vector<std::size_t>& cols) const;

    /// Right action restricted to an index subset: (P[S,S] f)(S-order).
    Eigen::VectorXd apply_right_on(const std::vector<std::size_t>& subset,
                                   const Eigen::VectorXd& f_on_subset) const;
    Eigen::VectorXd apply_left_on(const std::vector<std::size_t>& subset,
                                  const Eigen::VectorXd& mu_on_subset) const;

    SubKernel() = default;  // empty kernel; populated by the factories

private:
    void finalize();

    StateSpacePtr space_;
    std::size_t n_ = 0;
    std::vector<std::size_t> offsets_, cols_;
    std::vector<double> vals_;
    Eigen::VectorXd row_sums_;
    Storage storage_ = Storage::Sparse;
    Eigen::MatrixXd dense_;  // populated only in dense mode
};

// ---------------------------------------------------------------------------
// Operations

struct ApplyResult {
    Eigen::VectorXd sub;  // mu P, componentwise
    double mass;          // mu P 1
};
ApplyResult apply(const SubKernel& k, const Dist& mu);

/// mu P_n / mu P_n 1. Throws ExtinctionError with the first dead step.
Dist evolve_conditional(const SubKernel& k, const Dist& mu, int n);

/// sup over f: E -> [-1,1] of |a(f) - b(f)| = sum |a_i - b_i|, range [0,2].
/// Half this value is the measure-theoretic total variation.
double tv_distance(const Dist& a, const Dist& b);

/// P_x(n < absorption) = (P^n 1)(x), by n repeated vector products.
double survival(const SubKernel& k, std::size_t x, int n);
/// P^n 1 for all states at once.
Eigen::VectorXd survival_all(const SubKernel& k, int n);

/// E_x(theta^{-(T_K ∧ absorption time)}).
struct HittingMoment {
    StateSet K;
    double theta = 0;
    Eigen::VectorXd values;     // +infinity where divergent
    std::vector<bool> finite;   // per state
    bool converged = true;      // all states finite
};
HittingMoment hitting_moment(const SubKernel& k, const StateSet& K, double theta);

/// States from which K is reachable through positive entries (K included).
StateSet survivor_set(const SubKernel& k, const StateSet& K);

// ---------------------------------------------------------------------------
// Kernel file format: "qsdk v1 <size>", label lines, then row-major triplets.

void save_kernel(const SubKernel& k, std::ostream& out);
SubKernel load_kernel(std::istream& in);
void save_kernel_file(const SubKernel& k, const std::string& path);
SubKernel load_kernel_file(const std::string& path);

namespace detail {

/// Minimal nonnegative solution of theta*phi = P[S,S]*phi + b on the index
/// subset S, with structural detection of divergent states (those that can
/// reach an SCC of P[S,S] whose Perron root is >= theta).
struct DiscountedSolve {
    Eigen::VectorXd values;    // on S, in S order; +infinity where divergent
    std::vector<bool> finite;  // on S
    bool all_finite = true;
};
DiscountedSolve discounted_fixed_point(const SubKernel& k, const std::vector<std::size_t>& S,
                                       const Eigen::VectorXd& b_on_S, double theta);

/// Perron root of the subkernel restricted to `members` (power iteration on
/// B + I, which is primitive whenever B is irreducible).
double class_perron_root(const SubKernel& k, const std::vector<std::size_t>& members,
                         double tol = 1e-13, int max_iter = 200000);

std::string format_double(double v);  // shortest round-trip decimal

}  // namespace detail

}  // namespace qsdlab
