#include "qsdlab/kernel.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <istream>
#include <limits>
#include <ostream>
#include <sstream>

#include <Eigen/LU>

#include "qsdlab/errors.hpp"

namespace qsdlab {

namespace {
constexpr double kRowSumSlack = 1e-12;
constexpr double kDenseCutoff = 0.10;
}  // namespace

// ---------------------------------------------------------------------------
// Dist

Dist::Dist(StateSpacePtr space, Eigen::VectorXd weights)
    : space_(std::move(space)), weights_(std::move(weights)) {
    if (static_cast<std::size_t>(weights_.size()) != space_->size())
        throw DimensionMismatch(weights_.size(), space_->size(), "distribution weights");
    if ((weights_.array() < 0).any()) throw Precondition("distribution has a negative weight");
}

Dist Dist::dirac(StateSpacePtr space, std::size_t state) {
    Eigen::VectorXd w = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(space->size()));
    w(static_cast<Eigen::Index>(state)) = 1.0;
    return Dist(std::move(space), std::move(w));
}

Dist Dist::uniform(StateSpacePtr space) {
    const auto n = static_cast<Eigen::Index>(space->size());
    return Dist(std::move(space), Eigen::VectorXd::Constant(n, 1.0 / static_cast<double>(n)));
}

bool Dist::is_probability(double tol) const { return std::abs(total_mass() - 1.0) <= tol; }

double Dist::integrate(const Eigen::VectorXd& f) const {
    if (f.size() != weights_.size())
        throw DimensionMismatch(f.size(), weights_.size(), "integrate");
    return weights_.dot(f);
}

// ---------------------------------------------------------------------------
// SubKernel

SubKernel SubKernel::from_dense(StateSpacePtr space, const Eigen::MatrixXd& rows) {
    std::vector<std::tuple<std::size_t, std::size_t, double>> entries;
    for (Eigen::Index i = 0; i < rows.rows(); ++i)
        for (Eigen::Index j = 0; j < rows.cols(); ++j)
            if (rows(i, j) != 0.0)
                entries.emplace_back(static_cast<std::size_t>(i), static_cast<std::size_t>(j), rows(i, j));
    if (static_cast<std::size_t>(rows.rows()) != space->size() || rows.rows() != rows.cols())
        throw DimensionMismatch(rows.rows(), space->size(), "kernel matrix");
    return from_triplets(std::move(space), entries);
}

SubKernel SubKernel::from_triplets(
    StateSpacePtr space, const std::vector<std::tuple<std::size_t, std::size_t, double>>& entries) {
    SubKernel k;
    k.space_ = std::move(space);
    k.n_ = k.space_->size();

    std::vector<std::tuple<std::size_t, std::size_t, double>> sorted;
    sorted.reserve(entries.size());
    for (const auto& [i, j, w] : entries) {
        if (i >= k.n_ || j >= k.n_)
            throw DimensionMismatch(std::max(i, j), k.n_, "kernel triplet index");
        if (w < 0) throw Precondition("negative kernel entry at (" + std::to_string(i) + "," +
                                      std::to_string(j) + ")");
        if (!std::isfinite(w)) throw Precondition("non-finite kernel entry");
        if (w != 0.0) sorted.emplace_back(i, j, w);
    }
    std::sort(sorted.begin(), sorted.end(), [](const auto& l, const auto& r) {
        return std::tie(std::get<0>(l), std::get<1>(l)) < std::tie(std::get<0>(r), std::get<1>(r));
    });

    k.offsets_.assign(k.n_ + 1, 0);
    k.cols_.reserve(sorted.size());
    k.vals_.reserve(sorted.size());
    for (std::size_t m = 0; m < sorted.size();) {
        const std::size_t row = std::get<0>(sorted[m]);
        const std::size_t col = std::get<1>(sorted[m]);
        double acc = 0;
        while (m < sorted.size() && std::get<0>(sorted[m]) == row && std::get<1>(sorted[m]) == col)
            acc += std::get<2>(sorted[m++]);
        k.cols_.push_back(col);
        k.vals_.push_back(acc);
        ++k.offsets_[row + 1];
    }
    for (std::size_t r = 0; r < k.n_; ++r) k.offsets_[r + 1] += k.offsets_[r];
    k.finalize();
    return k;
}

void SubKernel::finalize() {
    row_sums_ = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(n_));
    for (std::size_t i = 0; i < n_; ++i) {
        double s = 0;
        for (std::size_t p = offsets_[i]; p < offsets_[i + 1]; ++p) s += vals_[p];
        if (s > 1.0 + kRowSumSlack)
            throw Precondition("row " + std::to_string(i) + " sums to " + std::to_string(s) +
                               " > 1");
        row_sums_(static_cast<Eigen::Index>(i)) = s;
    }
    storage_ = (density() >= kDenseCutoff) ? Storage::Dense : Storage::Sparse;
    if (storage_ == Storage::Dense) {
        dense_ = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(n_), static_cast<Eigen::Index>(n_));
        for (std::size_t i = 0; i < n_; ++i)
            for (std::size_t p = offsets_[i]; p < offsets_[i + 1]; ++p)
                dense_(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(cols_[p])) = vals_[p];
    }
}

double SubKernel::entry(std::size_t i, std::size_t j) const {
    if (storage_ == Storage::Dense)
        return dense_(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
    auto begin = cols_.begin() + static_cast<std::ptrdiff_t>(offsets_[i]);
    auto end = cols_.begin() + static_cast<std::ptrdiff_t>(offsets_[i + 1]);
    auto it = std::lower_bound(begin, end, j);
    if (it == end || *it != j) return 0.0;
    return vals_[static_cast<std::size_t>(it - cols_.begin())];
}

Eigen::VectorXd SubKernel::apply_left(const Eigen::VectorXd& mu) const {
    if (static_cast<std::size_t>(mu.size()) != n_)
        throw DimensionMismatch(mu.size(), n_, "apply_left");
    if (storage_ == Storage::Dense) return dense_.transpose() * mu;
    Eigen::VectorXd out = Eigen::VectorXd::Zero(mu.size());
    for (std::size_t i = 0; i < n_; ++i) {
        const double m = mu(static_cast<Eigen::Index>(i));
        if (m == 0.0) continue;
        for (std::size_t p = offsets_[i]; p < offsets_[i + 1]; ++p)
            out(static_cast<Eigen::Index>(cols_[p])) += m * vals_[p];
    }
    return out;
}

Eigen::VectorXd SubKernel::apply_right(const Eigen::VectorXd& f) const {
    if (static_cast<std::size_t>(f.size()) != n_)
        throw DimensionMismatch(f.size(), n_, "apply_right");
    if (storage_ == Storage::Dense) return dense_ * f;
    Eigen::VectorXd out = Eigen::VectorXd::Zero(f.size());
    for (std::size_t i = 0; i < n_; ++i) {
        double acc = 0;
        for (std::size_t p = offsets_[i]; p < offsets_[i + 1]; ++p)
            acc += vals_[p] * f(static_cast<Eigen::Index>(cols_[p]));
        out(static_cast<Eigen::Index>(i)) = acc;
    }
    return out;
}

graph::Adjacency SubKernel::adjacency() const {
    graph::Adjacency adj(n_);
    for (std::size_t i = 0; i < n_; ++i)
        for (std::size_t p = offsets_[i]; p < offsets_[i + 1]; ++p) adj[i].push_back(cols_[p]);
    return adj;
}

Eigen::MatrixXd SubKernel::dense() const {
    if (storage_ == Storage::Dense) return dense_;
    Eigen::MatrixXd m = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(n_), static_cast<Eigen::Index>(n_));
    for (std::size_t i = 0; i < n_; ++i)
        for (std::size_t p = offsets_[i]; p < offsets_[i + 1]; ++p)
            m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(cols_[p])) = vals_[p];
    return m;
}

Eigen::MatrixXd SubKernel::dense_block(const std::vector<std::size_t>& rows,
                                       const std::vector<std::size_t>& cols) const {
    std::vector<std::ptrdiff_t> col_pos(n_, -1);
    for (std::size_t c = 0; c < cols.size(); ++c) col_pos[cols[c]] = static_cast<std::ptrdiff_t>(c);
    Eigen::MatrixXd m =
        Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(cols.size()));
    for (std::size_t r = 0; r < rows.size(); ++r)
        for (std::size_t p = offsets_[rows[r]]; p < offsets_[rows[r] + 1]; ++p) {
            std::ptrdiff_t c = col_pos[cols_[p]];
            if (c >= 0) m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = vals_[p];
        }
    return m;
}

Eigen::VectorXd SubKernel::apply_right_on(const std::vector<std::size_t>& subset,
                                          const Eigen::VectorXd& f_on_subset) const {
    std::vector<std::ptrdiff_t> pos(n_, -1);
    for (std::size_t s = 0; s < subset.size(); ++s) pos[subset[s]] = static_cast<std::ptrdiff_t>(s);
    Eigen::VectorXd out = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(subset.size()));
    for (std::size_t s = 0; s < subset.size(); ++s) {
        double acc = 0;
        for (std::size_t p = offsets_[subset[s]]; p < offsets_[subset[s] + 1]; ++p) {
            std::ptrdiff_t c = pos[cols_[p]];
            if (c >= 0) acc += vals_[p] * f_on_subset(static_cast<Eigen::Index>(c));
        }
        out(static_cast<Eigen::Index>(s)) = acc;
    }
    return out;
}

Eigen::VectorXd SubKernel::apply_left_on(const std::vector<std::size_t>& subset,
                                         const Eigen::VectorXd& mu_on_subset) const {
    std::vector<std::ptrdiff_t> pos(n_, -1);
    for (std::size_t s = 0; s < subset.size(); ++s) pos[subset[s]] = static_cast<std::ptrdiff_t>(s);
    Eigen::VectorXd out = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(subset.size()));
    for (std::size_t s = 0; s < subset.size(); ++s) {
        const double m = mu_on_subset(static_cast<Eigen::Index>(s));
        if (m == 0.0) continue;
        for (std::size_t p = offsets_[subset[s]]; p < offsets_[subset[s] + 1]; ++p) {
            std::ptrdiff_t c = pos[cols_[p]];
            if (c >= 0) out(static_cast<Eigen::Index>(c)) += m * vals_[p];
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Operations

ApplyResult apply(const SubKernel& k, const Dist& mu) {
    if (mu.space()->size() != k.size())
        throw DimensionMismatch(mu.space()->size(), k.size(), "apply");
    ApplyResult res;
    res.sub = k.apply_left(mu.weights());
    res.mass = res.sub.sum();
    return res;
}

Dist evolve_conditional(const SubKernel& k, const Dist& mu, int n) {
    if (n < 0) throw Precondition("negative step count");
    if (mu.space()->size() != k.size())
        throw DimensionMismatch(mu.space()->size(), k.size(), "evolve_conditional");
    Eigen::VectorXd w = mu.weights();
    double mass = w.sum();
    if (mass <= 0) throw ExtinctionError(0);
    w /= mass;
    for (int step = 1; step <= n; ++step) {
        w = k.apply_left(w);
        mass = w.sum();
        if (mass <= 0) throw ExtinctionError(step);
        w /= mass;  // renormalize each step to avoid underflow
    }
    return Dist(mu.space(), std::move(w));
}

double tv_distance(const Dist& a, const Dist& b) {
    if (a.space()->size() != b.space()->size())
        throw DimensionMismatch(a.space()->size(), b.space()->size(), "tv_distance");
    return (a.weights() - b.weights()).lpNorm<1>();
}

Eigen::VectorXd survival_all(const SubKernel& k, int n) {
    Eigen::VectorXd u = Eigen::VectorXd::Ones(static_cast<Eigen::Index>(k.size()));
    for (int step = 0; step < n; ++step) u = k.apply_right(u);
    return u;
}

double survival(const SubKernel& k, std::size_t x, int n) {
    if (x >= k.size()) throw DimensionMismatch(x, k.size(), "survival state");
    return survival_all(k, n)(static_cast<Eigen::Index>(x));
}

StateSet survivor_set(const SubKernel& k, const StateSet& K) {
    auto adj = k.adjacency();
    auto mask = graph::can_reach(adj, K.mask());
    return StateSet::from_mask(mask);
}

// ---------------------------------------------------------------------------
// Discounted fixed point and hitting moments

namespace detail {

double class_perron_root(const SubKernel& k, const std::vector<std::size_t>& members, double tol,
                         int max_iter) {
    if (members.empty()) return 0.0;
    if (members.size() == 1) return k.entry(members[0], members[0]);
    // Power iteration on B + I; the +I makes the block primitive so the norm
    // ratio converges even for periodic classes.
    Eigen::VectorXd v = Eigen::VectorXd::Ones(static_cast<Eigen::Index>(members.size()));
    v /= v.sum();
    double rho_shifted = 1.0;
    for (int it = 0; it < max_iter; ++it) {
        Eigen::VectorXd w = k.apply_right_on(members, v) + v;
        double norm = w.sum();
        if (norm <= 0) return 0.0;
        w /= norm;
        double change = (w - v).lpNorm<Eigen::Infinity>();
        v = std::move(w);
        rho_shifted = norm;
        if (change < tol) break;
    }
    return rho_shifted - 1.0;
}

DiscountedSolve discounted_fixed_point(const SubKernel& k, const std::vector<std::size_t>& S,
                                       const Eigen::VectorXd& b_on_S, double theta) {
    constexpr double kRootTol = 1e-12;
    constexpr std::size_t kDenseLimit = 2000;
    const double inf = std::numeric_limits<double>::infinity();

    DiscountedSolve out;
    const std::size_t m = S.size();
    out.values = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(m));
    out.finite.assign(m, true);
    if (m == 0) return out;

    // Subgraph of S and its condensation.
    std::vector<std::ptrdiff_t> pos(k.size(), -1);
    for (std::size_t s = 0; s < m; ++s) pos[S[s]] = static_cast<std::ptrdiff_t>(s);
    graph::Adjacency adj(m);
    for (std::size_t s = 0; s < m; ++s)
        k.for_each_in_row(S[s], [&](std::size_t j, double) {
            if (pos[j] >= 0) adj[s].push_back(static_cast<std::size_t>(pos[j]));
        });
    auto scc = graph::tarjan_scc(adj);

    // SCCs whose Perron root reaches theta make the series diverge; so do all
    // states that can reach one of them.
    std::vector<bool> divergent_core(m, false);
    for (const auto& comp : scc.components) {
        std::vector<std::size_t> global;
        global.reserve(comp.size());
        for (std::size_t s : comp) global.push_back(S[s]);
        bool trivial = comp.size() == 1 && k.entry(global[0], global[0]) == 0.0;
        if (trivial) continue;
        double rho = class_perron_root(k, global);
        if (rho >= theta * (1.0 - kRootTol))
            for (std::size_t s : comp) divergent_core[s] = true;
    }
    auto divergent = graph::can_reach(adj, divergent_core);

    std::vector<std::size_t> finite_local;
    for (std::size_t s = 0; s < m; ++s) {
        if (divergent[s]) {
            out.finite[s] = false;
            out.all_finite = false;
            out.values(static_cast<Eigen::Index>(s)) = inf;
        } else {
            finite_local.push_back(s);
        }
    }
    if (finite_local.empty()) return out;

    std::vector<std::size_t> F;  // global indices of finite states
    F.reserve(finite_local.size());
    Eigen::VectorXd b(static_cast<Eigen::Index>(finite_local.size()));
    for (std::size_t q = 0; q < finite_local.size(); ++q) {
        F.push_back(S[finite_local[q]]);
        b(static_cast<Eigen::Index>(q)) = b_on_S(static_cast<Eigen::Index>(finite_local[q]));
    }

    Eigen::VectorXd phi;
    if (F.size() <= kDenseLimit) {
        Eigen::MatrixXd A = k.dense_block(F, F);
        Eigen::MatrixXd M = theta * Eigen::MatrixXd::Identity(A.rows(), A.cols()) - A;
        Eigen::PartialPivLU<Eigen::MatrixXd> lu(M);
        phi = lu.solve(b);
        // one pass of iterative refinement
        Eigen::VectorXd r = b - M * phi;
        phi += lu.solve(r);
        if (!phi.allFinite()) {
            std::vector<std::size_t> bad;
            for (Eigen::Index i = 0; i < phi.size(); ++i)
                if (!std::isfinite(phi(i))) bad.push_back(F[static_cast<std::size_t>(i)]);
            throw SingularSystem("discounted hitting system singular at machine precision", bad);
        }
        double resid = (b - M * phi).lpNorm<Eigen::Infinity>();
        if (resid > 1e-10 * std::max(1.0, b.lpNorm<Eigen::Infinity>()))
            throw SingularSystem("discounted hitting system: residual " + std::to_string(resid), F);
    } else {
        // Neumann iteration; convergent since every root below theta on F.
        phi = Eigen::VectorXd::Zero(b.size());
        const double btol = 1e-10 * std::max(1.0, b.lpNorm<Eigen::Infinity>());
        for (int it = 0; it < 1000000; ++it) {
            Eigen::VectorXd next = (k.apply_right_on(F, phi) + b) / theta;
            double change = (next - phi).lpNorm<Eigen::Infinity>();
            phi = std::move(next);
            if (change < btol) break;
        }
    }
    for (std::size_t q = 0; q < finite_local.size(); ++q)
        out.values(static_cast<Eigen::Index>(finite_local[q])) = phi(static_cast<Eigen::Index>(q));
    return out;
}

}  // namespace detail

HittingMoment hitting_moment(const SubKernel& k, const StateSet& K, double theta) {
    if (K.empty()) throw Precondition("hitting_moment: K must be nonempty");
    if (!(theta > 0.0 && theta < 1.0)) throw Precondition("hitting_moment: theta must lie in (0,1)");
    if (K.space_size() != k.size())
        throw DimensionMismatch(K.space_size(), k.size(), "hitting_moment");

    HittingMoment hm;
    hm.K = K;
    hm.theta = theta;
    hm.values = Eigen::VectorXd::Ones(static_cast<Eigen::Index>(k.size()));
    hm.finite.assign(k.size(), true);

    std::vector<std::size_t> S = K.complement().indices();
    if (S.empty()) return hm;

    // b(x) = P 1_K (x) + absorption(x) on off-K states
    Eigen::VectorXd b(static_cast<Eigen::Index>(S.size()));
    for (std::size_t s = 0; s < S.size(); ++s) {
        double into_K = 0;
        k.for_each_in_row(S[s], [&](std::size_t j, double w) {
            if (K.contains(j)) into_K += w;
        });
        b(static_cast<Eigen::Index>(s)) = into_K + k.absorption(S[s]);
    }
    auto sol = detail::discounted_fixed_point(k, S, b, theta);
    for (std::size_t s = 0; s < S.size(); ++s) {
        hm.values(static_cast<Eigen::Index>(S[s])) = sol.values(static_cast<Eigen::Index>(s));
        hm.finite[S[s]] = sol.finite[s];
    }
    hm.converged = sol.all_finite;
    return hm;
}

// ---------------------------------------------------------------------------
// File format

namespace detail {

std::string format_double(double v) {
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

}  // namespace detail

void save_kernel(const SubKernel& k, std::ostream& out) {
    out << "qsdk v1 " << k.size() << "\n";
    for (std::size_t i = 0; i < k.size(); ++i) out << "label " << k.space()->label(i) << "\n";
    for (std::size_t i = 0; i < k.size(); ++i)
        k.for_each_in_row(i, [&](std::size_t j, double w) {
            out << i << " " << j << " " << detail::format_double(w) << "\n";
        });
}

SubKernel load_kernel(std::istream& in) {
    std::string magic, version;
    std::size_t n = 0;
    if (!(in >> magic >> version >> n) || magic != "qsdk" || version != "v1")
        throw Precondition("not a qsdk v1 kernel file");
    std::vector<std::string> labels;
    labels.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        std::string tag, label;
        if (!(in >> tag >> label) || tag != "label")
            throw Precondition("kernel file: expected 'label' line " + std::to_string(i));
        labels.push_back(label);
    }
    std::vector<std::tuple<std::size_t, std::size_t, double>> entries;
    std::size_t i = 0, j = 0;
    std::string wtoken;
    while (in >> i >> j >> wtoken) {
        double w = 0;
        auto res = std::from_chars(wtoken.data(), wtoken.data() + wtoken.size(), w);
        if (res.ec != std::errc())
            throw Precondition("kernel file: bad weight '" + wtoken + "'");
        entries.emplace_back(i, j, w);
    }
    return SubKernel::from_triplets(StateSpace::from_labels(std::move(labels)), entries);
}

void save_kernel_file(const SubKernel& k, const std::string& path) {
    std::ofstream f(path);
    if (!f) throw Precondition("cannot open '" + path + "' for writing");
    save_kernel(k, f);
}

SubKernel load_kernel_file(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw Precondition("cannot open '" + path + "'");
    return load_kernel(f);
}

}  // namespace qsdlab
