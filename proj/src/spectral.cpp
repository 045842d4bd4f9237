#include "qsdlab/spectral.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <limits>

#include <Eigen/LU>
#include <json.hpp>

#include "qsdlab/errors.hpp"
#include "qsdlab/graph.hpp"

namespace qsdlab {

namespace {

constexpr double kTieTol = 1e-12;

struct ClassAnalysis {
    graph::SccResult scc;
    std::vector<double> roots;
    std::size_t dominant = 0;
};

ClassAnalysis analyze_classes(const SubKernel& k,
                              std::optional<std::size_t> class_hint_state) {
    ClassAnalysis ca;
    auto adj = k.adjacency();
    ca.scc = graph::tarjan_scc(adj);
    ca.roots.resize(ca.scc.components.size());
    for (std::size_t c = 0; c < ca.scc.components.size(); ++c)
        ca.roots[c] = detail::class_perron_root(k, ca.scc.components[c]);

    if (class_hint_state) {
        if (*class_hint_state >= k.size())
            throw DimensionMismatch(*class_hint_state, k.size(), "class hint state");
        ca.dominant = ca.scc.component_of[*class_hint_state];
        return ca;
    }

    std::size_t best = 0;
    for (std::size_t c = 1; c < ca.roots.size(); ++c)
        if (ca.roots[c] > ca.roots[best]) best = c;
    if (ca.roots[best] > 1e-300) {  // nilpotent kernels error out later, not as a tie
        for (std::size_t c = 0; c < ca.roots.size(); ++c)
            if (c != best && ca.roots[c] >= ca.roots[best] - kTieTol)
                throw DominantClassTie(ca.roots[best], ca.scc.components[best],
                                       ca.scc.components[c]);
    }
    ca.dominant = best;
    return ca;
}

/// Left-system analogue of discounted_fixed_point: x (theta I - P[S,S]) = rhs.
Eigen::VectorXd solve_left(const SubKernel& k, const std::vector<std::size_t>& S,
                           const Eigen::VectorXd& rhs, double theta) {
    if (S.empty()) return Eigen::VectorXd();
    if (S.size() <= 2000) {
        Eigen::MatrixXd A = k.dense_block(S, S);
        Eigen::MatrixXd M = theta * Eigen::MatrixXd::Identity(A.rows(), A.cols()) - A;
        Eigen::PartialPivLU<Eigen::MatrixXd> lu(M.transpose());
        Eigen::VectorXd x = lu.solve(rhs);
        Eigen::VectorXd r = rhs - M.transpose() * x;
        x += lu.solve(r);
        return x;
    }
    Eigen::VectorXd x = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(S.size()));
    const double btol = 1e-12 * std::max(1.0, rhs.lpNorm<Eigen::Infinity>());
    for (int it = 0; it < 1000000; ++it) {
        Eigen::VectorXd next = (k.apply_left_on(S, x) + rhs) / theta;
        double change = (next - x).lpNorm<Eigen::Infinity>();
        x = std::move(next);
        if (change < btol) break;
    }
    return x;
}

}  // namespace

QsdSolution solve_qsd(const SubKernel& k, double tol, int max_iter,
                      std::optional<std::size_t> class_hint_state) {
    const std::size_t n = k.size();
    if (n == 0) throw Precondition("solve_qsd: empty state space");

    auto ca = analyze_classes(k, class_hint_state);
    const auto& D = ca.scc.components[ca.dominant];
    const double root = ca.roots[ca.dominant];
    if (root <= 1e-300)
        throw Precondition(
            "solve_qsd: dominant Perron root is 0 (all mass dies in finitely many steps); no "
            "quasi-stationary regime exists");

    auto adj = k.adjacency();
    int period = graph::class_period(adj, D);
    if (period > 1) throw PeriodicityError(period);

    // Simultaneous power iteration on the dominant class and its transpose.
    const auto m = static_cast<Eigen::Index>(D.size());
    Eigen::VectorXd v = Eigen::VectorXd::Constant(m, 1.0 / static_cast<double>(m));
    Eigen::VectorXd u = v;
    int iters = 0;
    double theta = root;

    auto residuals_ok = [&](double th) {
        Eigen::VectorXd rv = k.apply_right_on(D, v) - th * v;
        Eigen::VectorXd ru = k.apply_left_on(D, u) - th * u;
        double scale = std::max(th, 1e-30);
        return rv.lpNorm<Eigen::Infinity>() <= tol * scale * v.lpNorm<Eigen::Infinity>() &&
               ru.lpNorm<Eigen::Infinity>() <= tol * scale * u.lpNorm<Eigen::Infinity>();
    };

    const int plain_limit = std::min(max_iter, 400);
    bool converged = false;
    for (; iters < plain_limit; ++iters) {
        Eigen::VectorXd pv = k.apply_right_on(D, v);
        Eigen::VectorXd pu = k.apply_left_on(D, u);
        double nv = pv.lpNorm<1>();
        double nu_norm = pu.lpNorm<1>();
        if (nv <= 1e-300 || nu_norm <= 1e-300)
            throw Precondition("solve_qsd: iterate mass underflow on the dominant class");
        theta = u.dot(pv) / u.dot(v);  // bi-Rayleigh estimate
        pv /= nv;
        pu /= nu_norm;
        double dv = (pv - v).lpNorm<Eigen::Infinity>();
        double du = (pu - u).lpNorm<Eigen::Infinity>();
        v = std::move(pv);
        u = std::move(pu);
        if (dv < tol && du < tol && residuals_ok(theta)) {
            converged = true;
            ++iters;
            break;
        }
    }

    if (!converged && D.size() <= 2000) {
        // Shift-invert polish: a shift just above the Collatz-Wielandt upper
        // bound contracts toward the Perron pair at a rate independent of the
        // spectral gap.
        Eigen::MatrixXd A = k.dense_block(D, D);
        for (int outer = 0; outer < 60 && !converged; ++outer) {
            Eigen::VectorXd av = A * v;
            double cw_max = 0;
            for (Eigen::Index i = 0; i < m; ++i)
                if (v(i) > 0) cw_max = std::max(cw_max, av(i) / v(i));
            double sigma = cw_max * (1.0 + 1e-9) + 1e-300;
            Eigen::PartialPivLU<Eigen::MatrixXd> lu(sigma * Eigen::MatrixXd::Identity(m, m) - A);
            Eigen::PartialPivLU<Eigen::MatrixXd> lut(
                (sigma * Eigen::MatrixXd::Identity(m, m) - A).transpose());
            for (int inner = 0; inner < 6; ++inner, ++iters) {
                v = lu.solve(v).cwiseMax(0.0);
                u = lut.solve(u).cwiseMax(0.0);
                v /= v.lpNorm<1>();
                u /= u.lpNorm<1>();
            }
            theta = u.dot(A * v) / u.dot(v);
            converged = residuals_ok(theta);
        }
    } else if (!converged) {
        for (; iters < max_iter; ++iters) {
            Eigen::VectorXd pv = k.apply_right_on(D, v);
            Eigen::VectorXd pu = k.apply_left_on(D, u);
            theta = u.dot(pv) / u.dot(v);
            pv /= pv.lpNorm<1>();
            pu /= pu.lpNorm<1>();
            v = std::move(pv);
            u = std::move(pu);
            if (iters % 64 == 0 && residuals_ok(theta)) {
                converged = true;
                break;
            }
        }
    }
    if (!converged && !residuals_ok(theta))
        throw HorizonExhausted("solve_qsd: power iteration did not reach tolerance " +
                                   std::to_string(tol),
                               theta);

    // theta0 read off as the norm ratio averaged over the last 10 steps
    {
        std::deque<double> ratio_window;
        Eigen::VectorXd w = v;
        for (int s = 0; s < 10; ++s) {
            Eigen::VectorXd pw = k.apply_right_on(D, w);
            double nrm = pw.lpNorm<1>();
            if (nrm <= 1e-300) break;
            ratio_window.push_back(nrm / w.lpNorm<1>());
            w = std::move(pw);
            w /= w.lpNorm<1>();
        }
        if (!ratio_window.empty()) {
            theta = 0;
            for (double r : ratio_window) theta += r;
            theta /= static_cast<double>(ratio_window.size());
        }
    }
    if (D.size() == 1) theta = root;  // exact for a singleton class

    QsdSolution sol{.theta0 = theta,
                    .nu = Dist(k.space(), Eigen::VectorXd::Zero(static_cast<Eigen::Index>(n))),
                    .eta = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(n)),
                    .e_prime = StateSet(),
                    .dominant_class = D,
                    .iterations = iters};

    // eta on the survivor set: Perron vector on D, harmonic extension upstream.
    std::vector<bool> dmask(n, false);
    for (std::size_t x : D) dmask[x] = true;
    auto smask = graph::can_reach(adj, dmask);
    sol.e_prime = StateSet::from_mask(smask);

    Eigen::VectorXd eta = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(n));
    for (std::size_t p = 0; p < D.size(); ++p)
        eta(static_cast<Eigen::Index>(D[p])) = v(static_cast<Eigen::Index>(p));

    std::vector<std::size_t> upstream;
    for (std::size_t x : sol.e_prime.indices())
        if (!dmask[x]) upstream.push_back(x);
    if (!upstream.empty()) {
        Eigen::VectorXd b(static_cast<Eigen::Index>(upstream.size()));
        for (std::size_t q = 0; q < upstream.size(); ++q) {
            double acc = 0;
            k.for_each_in_row(upstream[q], [&](std::size_t j, double w) {
                if (dmask[j]) acc += w * eta(static_cast<Eigen::Index>(j));
            });
            b(static_cast<Eigen::Index>(q)) = acc;
        }
        auto ext = detail::discounted_fixed_point(k, upstream, b, theta);
        if (!ext.all_finite)
            throw Precondition("solve_qsd: upstream extension diverged; class roots inconsistent");
        for (std::size_t q = 0; q < upstream.size(); ++q)
            eta(static_cast<Eigen::Index>(upstream[q])) = ext.values(static_cast<Eigen::Index>(q));
    }

    // nu on the forward closure of D: left Perron vector on D, pushed downstream.
    auto rmask = graph::reachable_from(adj, dmask);
    Eigen::VectorXd nu_w = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(n));
    for (std::size_t p = 0; p < D.size(); ++p)
        nu_w(static_cast<Eigen::Index>(D[p])) = u(static_cast<Eigen::Index>(p));
    std::vector<std::size_t> downstream;
    for (std::size_t x = 0; x < n; ++x)
        if (rmask[x] && !dmask[x]) downstream.push_back(x);
    if (!downstream.empty()) {
        std::vector<std::ptrdiff_t> pos(n, -1);
        for (std::size_t q = 0; q < downstream.size(); ++q)
            pos[downstream[q]] = static_cast<std::ptrdiff_t>(q);
        Eigen::VectorXd rhs = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(downstream.size()));
        for (std::size_t x : D)
            k.for_each_in_row(x, [&](std::size_t j, double w) {
                if (pos[j] >= 0)
                    rhs(static_cast<Eigen::Index>(pos[j])) += w * nu_w(static_cast<Eigen::Index>(x));
            });
        Eigen::VectorXd nd = solve_left(k, downstream, rhs, theta);
        for (std::size_t q = 0; q < downstream.size(); ++q)
            nu_w(static_cast<Eigen::Index>(downstream[q])) = std::max(0.0, nd(static_cast<Eigen::Index>(q)));
    }
    nu_w /= nu_w.sum();
    sol.nu = Dist(k.space(), nu_w);

    // normalize eta by nu(eta) = 1
    double nu_eta = nu_w.dot(eta);
    if (nu_eta <= 0) throw Precondition("solve_qsd: nu(eta) <= 0; degenerate solution");
    eta /= nu_eta;
    sol.eta = eta;

    sol.left_residual = (k.apply_left(nu_w) - theta * nu_w).lpNorm<1>();
    sol.right_residual =
        (k.apply_right(eta) - theta * eta).lpNorm<Eigen::Infinity>() / eta.lpNorm<Eigen::Infinity>();
    return sol;
}

std::string solution_to_json(const QsdSolution& sol) {
    nlohmann::ordered_json doc;
    doc["theta0"] = sol.theta0;
    doc["nu"] = std::vector<double>(sol.nu.weights().begin(), sol.nu.weights().end());
    doc["eta"] = std::vector<double>(sol.eta.begin(), sol.eta.end());
    doc["e_prime"] = sol.e_prime.indices();
    doc["residuals"] = {{"left", sol.left_residual}, {"right", sol.right_residual}};
    doc["iterations"] = sol.iterations;
    return doc.dump(2);
}

QProcess q_process(const SubKernel& k, const QsdSolution& sol) {
    const auto& ep = sol.e_prime.indices();
    if (ep.empty()) throw Precondition("q_process: survivor set is empty");

    std::vector<std::string> labels;
    labels.reserve(ep.size());
    for (std::size_t x : ep) labels.push_back(k.space()->label(x));
    auto sub_space = StateSpace::from_labels(std::move(labels));

    std::vector<std::ptrdiff_t> pos(k.size(), -1);
    for (std::size_t q = 0; q < ep.size(); ++q) pos[ep[q]] = static_cast<std::ptrdiff_t>(q);

    std::vector<std::tuple<std::size_t, std::size_t, double>> trip;
    for (std::size_t q = 0; q < ep.size(); ++q) {
        const std::size_t x = ep[q];
        const double eta_x = sol.eta(static_cast<Eigen::Index>(x));
        if (eta_x <= 0)
            throw Precondition("q_process: state " + k.space()->label(x) + " has eta <= 0");
        k.for_each_in_row(x, [&](std::size_t j, double w) {
            if (pos[j] 	< 0) return;  // eta = 0 there, no Q-process mass
            double t = sol.eta(static_cast<Eigen::Index>(j)) * w / (sol.theta0 * eta_x);
            if (t > 0) trip.emplace_back(q, static_cast<std::size_t>(pos[j]), t);
        });
    }

    // The algebraic identity P eta = theta0 eta makes rows sum to 1; clip the
    // solver residual so the result passes the stochasticity invariant.
    QProcess qp{SubKernel::from_triplets(sub_space, trip),
                Dist::uniform(sub_space), ep};
    for (std::size_t q = 0; q < ep.size(); ++q) {
        double rs = qp.tilde_kernel.row_sum(q);
        if (std::abs(rs - 1.0) > 1e-10)
            throw Precondition("q_process: row " + std::to_string(q) + " sums to " +
                               std::to_string(rs) + "; eta residual too large");
    }

    Eigen::VectorXd beta(static_cast<Eigen::Index>(ep.size()));
    for (std::size_t q = 0; q < ep.size(); ++q)
        beta(static_cast<Eigen::Index>(q)) =
            sol.eta(static_cast<Eigen::Index>(ep[q])) * sol.nu.weight(ep[q]);
    beta /= beta.sum();
    qp.beta = Dist(sub_space, beta);
    return qp;
}

ConvergenceFit fit_convergence(const SubKernel& k, const Dist& mu, const QsdSolution& sol,
                               int horizon) {
    if (horizon < 1) throw Precondition("fit_convergence: horizon must be >= 1");
    double mass_on_survivors = 0;
    for (std::size_t x : sol.e_prime.indices()) mass_on_survivors += mu.weight(x);
    if (mass_on_survivors <= 0)
        throw Precondition(
            "fit_convergence: initial law gives no mass to the survivor set (survivor_set check "
            "failed); conditional evolution cannot reach nu");

    ConvergenceFit fit;
    fit.horizon = horizon;
    fit.tv_series.reserve(static_cast<std::size_t>(horizon) + 1);

    Eigen::VectorXd w = mu.weights() / mu.weights().sum();
    fit.tv_series.push_back((w - sol.nu.weights()).lpNorm<1>());
    for (int n = 1; n <= horizon; ++n) {
        w = k.apply_left(w);
        double mass = w.sum();
        if (mass <= 0) throw ExtinctionError(n);
        w /= mass;
        fit.tv_series.push_back((w - sol.nu.weights()).lpNorm<1>());
    }

    fit.burn_in = horizon;
    for (int n = 0; n <= horizon; ++n)
        if (fit.tv_series[static_cast<std::size_t>(n)] < 1.0) {
            fit.burn_in = n;
            break;
        }

    // collect (n, log tv) points past burn-in, stopping at the solver noise
    // floor so the flat tail does not bias the slope
    constexpr double kFloor = 1e-11;
    std::vector<double> xs, ys;
    for (int n = fit.burn_in; n <= horizon; ++n) {
        double tv = fit.tv_series[static_cast<std::size_t>(n)];
        if (tv <= kFloor) break;
        xs.push_back(n);
        ys.push_back(std::log(tv));
    }
    if (xs.size() < 2) {
        fit.exact = true;  // quasi-stationary start: the series sits at the noise floor
        fit.alpha_hat = 0;
        fit.c_hat = 0;
        fit.r_squared = 1;
        return fit;
    }

    double sx = 0, sy = 0, sxx = 0, sxy = 0, syy = 0;
    const double np = static_cast<double>(xs.size());
    for (std::size_t i = 0; i < xs.size(); ++i) {
        sx += xs[i];
        sy += ys[i];
        sxx += xs[i] * xs[i];
        sxy += xs[i] * ys[i];
        syy += ys[i] * ys[i];
    }
    double denom = np * sxx - sx * sx;
    double slope = (np * sxy - sx * sy) / denom;
    double intercept = (sy - slope * sx) / np;
    fit.alpha_hat = std::exp(slope);
    fit.c_hat = std::exp(intercept);
    double ss_res = 0, ss_tot = 0, ymean = sy / np;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        double pred = intercept + slope * xs[i];
        ss_res += (ys[i] - pred) * (ys[i] - pred);
        ss_tot += (ys[i] - ymean) * (ys[i] - ymean);
    }
    fit.r_squared = ss_tot > 0 ? 1.0 - ss_res / ss_tot : 1.0;
    return fit;
}

double estimate_R(const SubKernel& k, std::size_t x, std::size_t y, int horizon) {
    if (x >= k.size() || y >= k.size())
        throw DimensionMismatch(std::max(x, y), k.size(), "estimate_R states");
    if (horizon < 2) throw Precondition("estimate_R: horizon must be >= 2");

    std::vector<bool> source(k.size(), false);
    source[x] = true;
    if (!graph::reachable_from(k.adjacency(), source)[y])
        throw Precondition("estimate_R: state " + k.space()->label(y) + " unreachable from " +
                           k.space()->label(x));

    Eigen::VectorXd v = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(k.size()));
    v(static_cast<Eigen::Index>(x)) = 1.0;
    double log_scale = 0;
    double prev_log = std::numeric_limits<double>::quiet_NaN();
    double last_log = std::numeric_limits<double>::quiet_NaN();
    for (int n = 1; n <= horizon; ++n) {
        v = k.apply_left(v);
        double mx = v.maxCoeff();
        if (mx <= 0)
            throw Precondition("estimate_R: all mass dead at step " + std::to_string(n));
        if (mx < 1e-250) {
            v /= mx;
            log_scale += std::log(mx);
        }
        double py = v(static_cast<Eigen::Index>(y));
        if (py > 0) {
            prev_log = last_log;
            last_log = std::log(py) + log_scale;
        }
    }
    if (!std::isfinite(last_log) || !std::isfinite(prev_log))
        throw Precondition("estimate_R: P^n(x,y) = 0 for all n <= horizon");
    // log P^n - log P^{n-1} -> log theta0; cancels the subexponential prefactor
    return std::exp(-(last_log - prev_log));
}

EigenpairReport classify_eigenpair(const SubKernel& k, const Eigen::VectorXcd& h,
                                   std::complex<double> h_at_cemetery, std::complex<double> theta,
                                   const QsdSolution& sol, double tol,
                                   const Eigen::VectorXd* phi1, double theta1) {
    const auto n = static_cast<Eigen::Index>(k.size());
    if (h.size() != n) throw DimensionMismatch(h.size(), k.size(), "classify_eigenpair");

    const double hscale = std::max(h.lpNorm<Eigen::Infinity>(), std::abs(h_at_cemetery));
    if (hscale == 0) throw Precondition("classify_eigenpair: h is identically zero");

    // residual of the cemetery-extended eigen equation
    double resid = std::abs(h_at_cemetery - theta * h_at_cemetery);
    Eigen::VectorXcd ph = Eigen::VectorXcd::Zero(n);
    for (std::size_t i = 0; i < k.size(); ++i) {
        std::complex<double> acc = k.absorption(i) * h_at_cemetery;
        k.for_each_in_row(i, [&](std::size_t j, double w) { acc += w * h(static_cast<Eigen::Index>(j)); });
        ph(static_cast<Eigen::Index>(i)) = acc;
    }
    resid = std::max(resid, (ph - theta * h).lpNorm<Eigen::Infinity>());
    if (resid > tol * std::max(1.0, hscale))
        throw Precondition("classify_eigenpair: not an eigenpair, residual " +
                           std::to_string(resid));

    EigenpairReport rep{};
    rep.residual = resid;
    rep.modulus_ratio = std::abs(theta) / sol.theta0;

    std::complex<double> nu_h = 0;
    for (std::size_t i = 0; i < k.size(); ++i)
        nu_h += sol.nu.weight(i) * h(static_cast<Eigen::Index>(i));
    rep.nu_h = nu_h;

    double max_on_survivors = 0;
    for (std::size_t i : sol.e_prime.indices())
        max_on_survivors = std::max(max_on_survivors, std::abs(h(static_cast<Eigen::Index>(i))));

    if (std::abs(h_at_cemetery) > tol * hscale) {
        if (sol.theta0 >= 1.0 - 1e-12)
            throw Precondition(
                "classify_eigenpair: h(cemetery) != 0 requires almost-sure absorption (theta0 < "
                "1)");
        rep.label = EigenfunctionCase::Constant;
    } else if (max_on_survivors <= tol * hscale) {
        rep.label = EigenfunctionCase::OffSurvivor;
    } else if (std::abs(nu_h) > tol * hscale) {
        rep.label = EigenfunctionCase::EtaMultiple;
        rep.theta_matches_theta0 = std::abs(theta - std::complex<double>(sol.theta0, 0)) <=
                                   10 * tol * std::max(1.0, sol.theta0);
        double mismatch = 0;
        for (Eigen::Index i = 0; i < n; ++i)
            mismatch = std::max(mismatch, std::abs(h(i) - nu_h * sol.eta(i)));
        rep.h_matches_eta = mismatch <= 100 * tol * hscale;
    } else {
        rep.label = EigenfunctionCase::Subdominant;
    }

    if (phi1 != nullptr && theta1 > 0 && std::abs(theta) > theta1) {
        double p = std::log(std::abs(theta)) / std::log(theta1);
        double c = 0;
        for (std::size_t i : sol.e_prime.indices()) {
            double denom = std::pow((*phi1)(static_cast<Eigen::Index>(i)), p);
            c = std::max(c, std::abs(h(static_cast<Eigen::Index>(i))) / denom);
        }
        rep.growth_checked = true;
        rep.growth_constant = c;
    }
    return rep;
}

}  // namespace qsdlab
