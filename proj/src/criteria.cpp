#include "qsdlab/criteria.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <limits>

#include <json.hpp>

#include "qsdlab/errors.hpp"

namespace qsdlab {

namespace {

/// Rows P^n(x, .) for all x in K, evolved jointly (one left action per row).
std::vector<Eigen::VectorXd> k_rows_at(const SubKernel& k, const StateSet& K, int n) {
    std::vector<Eigen::VectorXd> rows;
    rows.reserve(K.size());
    for (std::size_t x : K.indices()) {
        Eigen::VectorXd r = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(k.size()));
        r(static_cast<Eigen::Index>(x)) = 1.0;
        for (int s = 0; s < n; ++s) r = k.apply_left(r);
        rows.push_back(std::move(r));
    }
    return rows;
}

}  // namespace

MinorizationCertificate check_E1(const SubKernel& k, const StateSet& K, int n1) {
    if (K.empty()) throw Precondition("check_E1: K must be nonempty");
    if (n1 < 1) throw Precondition("check_E1: n1 must be >= 1");

    auto rows = k_rows_at(k, K, n1);
    Eigen::VectorXd mins = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(k.size()));
    double c1 = 0;
    for (std::size_t y : K.indices()) {
        double lo = std::numeric_limits<double>::infinity();
        for (const auto& r : rows) lo = std::min(lo, r(static_cast<Eigen::Index>(y)));
        mins(static_cast<Eigen::Index>(y)) = lo;
        c1 += lo;
    }
    if (c1 <= 0) {
        // witness: a target where some row has positive mass but another has none
        std::size_t best_y = K.indices()[0], row_zero = 0, row_max = 0;
        double best = -1;
        for (std::size_t y : K.indices()) {
            double hi = -1, lo = std::numeric_limits<double>::infinity();
            std::size_t arg_hi = 0, arg_lo = 0;
            for (std::size_t r = 0; r < rows.size(); ++r) {
                double v = rows[r](static_cast<Eigen::Index>(y));
                if (v > hi) {
                    hi = v;
                    arg_hi = K.indices()[r];
                }
                if (v < lo) {
                    lo = v;
                    arg_lo = K.indices()[r];
                }
            }
            if (hi > best) {
                best = hi;
                best_y = y;
                row_zero = arg_lo;
                row_max = arg_hi;
            }
        }
        throw MinorizationFailure(n1, row_zero, row_max, best_y);
    }
    MinorizationCertificate cert{K, n1, c1, Dist(k.space(), mins / c1)};
    return cert;
}

LyapunovCertificate check_E2(const SubKernel& k, const StateSet& K, const Eigen::VectorXd& phi1,
                             const Eigen::VectorXd& phi2) {
    const auto n = static_cast<Eigen::Index>(k.size());
    if (K.empty()) throw Precondition("check_E2: K must be nonempty");
    if (phi1.size() != n || phi2.size() != n)
        throw DimensionMismatch(static_cast<std::size_t>(std::max(phi1.size(), phi2.size())),
                                k.size(), "check_E2 shapes");
    if (!phi1.allFinite() || phi1.minCoeff() < 1.0 - 1e-12)
        throw Precondition("check_E2: phi1 must be finite and >= 1");
    if (phi2.minCoeff() < -1e-15 || phi2.maxCoeff() > 1.0 + 1e-12)
        throw Precondition("check_E2: phi2 must lie in [0,1]");
    double inf_K_phi2 = std::numeric_limits<double>::infinity();
    for (std::size_t x : K.indices()) inf_K_phi2 = std::min(inf_K_phi2, phi2(static_cast<Eigen::Index>(x)));
    if (inf_K_phi2 <= 0) throw Precondition("check_E2: phi2 must be positive on K");

    LyapunovCertificate cert;
    cert.K = K;
    cert.phi1 = phi1;
    cert.phi2 = phi2;

    Eigen::VectorXd p1 = k.apply_right(phi1);
    Eigen::VectorXd p2 = k.apply_right(phi2);

    // theta1: best off-K drift constant for phi1
    cert.theta1 = 0;
    cert.theta1_witness = K.indices().empty() ? 0 : K.indices()[0];
    for (std::size_t x = 0; x < k.size(); ++x) {
        if (K.contains(x)) continue;
        double ratio = p1(static_cast<Eigen::Index>(x)) / phi1(static_cast<Eigen::Index>(x));
        if (ratio > cert.theta1) {
            cert.theta1 = ratio;
            cert.theta1_witness = x;
        }
    }
    // c2: slack needed on K at the extracted theta1
    cert.c2 = 0;
    for (std::size_t x : K.indices()) {
        double excess = p1(static_cast<Eigen::Index>(x)) -
                        cert.theta1 * phi1(static_cast<Eigen::Index>(x));
        cert.c2 = std::max(cert.c2, excess);
    }
    // theta2: best global lower drift constant for phi2 over its support
    cert.theta2 = std::numeric_limits<double>::infinity();
    for (std::size_t x = 0; x < k.size(); ++x) {
        double ph = phi2(static_cast<Eigen::Index>(x));
        if (ph <= 0) continue;
        double ratio = p2(static_cast<Eigen::Index>(x)) / ph;
        if (ratio < cert.theta2) {
            cert.theta2 = ratio;
            cert.theta2_witness = x;
        }
    }
    if (!std::isfinite(cert.theta2)) cert.theta2 = 0;

    cert.phi1_slack = cert.theta1 * phi1 - p1;
    for (std::size_t x : K.indices())
        cert.phi1_slack(static_cast<Eigen::Index>(x)) += cert.c2;
    cert.phi2_slack = p2 - cert.theta2 * phi2;
    cert.pass = cert.theta1 < cert.theta2;
    return cert;
}

Phi2Construction construct_phi2(const SubKernel& k, const StateSet& K, double theta2,
                                int horizon) {
    if (K.empty()) throw Precondition("construct_phi2: K must be nonempty");
    if (!(theta2 > 0 && theta2 < 1)) throw Precondition("construct_phi2: theta2 must lie in (0,1)");

    const auto n = static_cast<Eigen::Index>(k.size());
    Eigen::VectorXd u = Eigen::VectorXd::Zero(n);  // P_x(X_j in K)
    for (std::size_t x : K.indices()) u(static_cast<Eigen::Index>(x)) = 1.0;

    // running S_m = sum_{j=0}^m theta2^{m-j} u_j stays bounded by 1/(1-theta2)
    Eigen::VectorXd S = u;
    double log_inf_scaled_best = -std::numeric_limits<double>::infinity();
    const double log_theta2 = std::log(theta2);

    for (int m = 1; m <= horizon; ++m) {
        u = k.apply_right(u);
        double inf_K = std::numeric_limits<double>::infinity();
        for (std::size_t x : K.indices())
            inf_K = std::min(inf_K, u(static_cast<Eigen::Index>(x)));
        double log_ratio =
            inf_K > 0 ? std::log(inf_K) - m * log_theta2 : -std::numeric_limits<double>::infinity();
        log_inf_scaled_best = std::max(log_inf_scaled_best, log_ratio);
        if (log_ratio >= 0) {
            // ell found: phi2 = (1-theta2)/(1-theta2^ell) * S_{ell-1}
            int ell = m;
            double denom = 1.0 - std::pow(theta2, ell);
            Eigen::VectorXd phi2 = (1.0 - theta2) / denom * S;
            for (Eigen::Index i = 0; i < n; ++i) phi2(i) = std::clamp(phi2(i), 0.0, 1.0);
            return {phi2, ell};
        }
        S = theta2 * S + u;
    }
    throw HorizonExhausted(
        "construct_phi2: theta2^-n inf_K P_x(X_n in K) never reached 1 within the horizon (best "
        "log ratio " +
            std::to_string(log_inf_scaled_best) + "); the growth hypothesis likely fails",
        std::exp(std::min(log_inf_scaled_best, 700.0)));
}

Phi1Construction construct_phi1(const SubKernel& k, const StateSet& K, double theta1) {
    auto hm = hitting_moment(k, K, theta1);
    if (!hm.converged) {
        std::vector<std::size_t> bad;
        for (std::size_t x = 0; x < k.size(); ++x)
            if (!hm.finite[x]) bad.push_back(x);
        throw DivergentMoment(theta1, bad);
    }
    Phi1Construction out;
    out.phi1 = hm.values;
    Eigen::VectorXd p1 = k.apply_right(out.phi1);
    out.c2 = 0;
    for (std::size_t x : K.indices()) {
        double excess =
            p1(static_cast<Eigen::Index>(x)) - theta1 * out.phi1(static_cast<Eigen::Index>(x));
        out.c2 = std::max(out.c2, excess);
    }
    return out;
}

HarnackReport check_E3(const SubKernel& k, const StateSet& K, int horizon,
                       const QsdSolution* sol) {
    if (K.empty()) throw Precondition("check_E3: K must be nonempty");
    HarnackReport rep;
    rep.horizon = horizon;

    std::vector<double> ratios;
    ratios.reserve(static_cast<std::size_t>(horizon) + 1);
    Eigen::VectorXd s = Eigen::VectorXd::Ones(static_cast<Eigen::Index>(k.size()));
    double log_scale = 0;
    for (int n = 0; n <= horizon; ++n) {
        if (n > 0) {
            s = k.apply_right(s);
            double mx = s.maxCoeff();
            if (mx > 0 && mx < 1e-250) {
                s /= mx;
                log_scale += std::log(mx);
            }
        }
        double hi = 0, lo = std::numeric_limits<double>::infinity();
        std::size_t dead = 0;
        for (std::size_t y : K.indices()) {
            double v = s(static_cast<Eigen::Index>(y));
            hi = std::max(hi, v);
            if (v < lo) {
                lo = v;
                dead = y;
            }
        }
        if (lo <= 0) throw HarnackFailure(n, dead);
        double ratio = hi / lo;
        ratios.push_back(ratio);
        if (ratio > rep.worst_ratio) {
            rep.worst_ratio = ratio;
            rep.worst_n = n;
        }
    }

    if (sol != nullptr) {
        double hi = 0, lo = std::numeric_limits<double>::infinity();
        for (std::size_t y : K.indices()) {
            hi = std::max(hi, sol->eta(static_cast<Eigen::Index>(y)));
            lo = std::min(lo, sol->eta(static_cast<Eigen::Index>(y)));
        }
        if (lo > 0) {
            rep.asymptotic_ratio = hi / lo;
            for (int n = 0; n <= horizon; ++n) {
                bool stable = true;
                for (int t = n; t <= horizon; ++t)
                    if (std::abs(ratios[static_cast<std::size_t>(t)] - *rep.asymptotic_ratio) >
                        0.01 * *rep.asymptotic_ratio) {
                        stable = false;
                        break;
                    }
                if (stable) {
                    rep.stabilization_index = n;
                    break;
                }
            }
        }
    }
    return rep;
}

AperiodicityReport check_E4(const SubKernel& k, const StateSet& K, int horizon) {
    if (K.empty()) throw Precondition("check_E4: K must be nonempty");
    AperiodicityReport rep;
    rep.K = K;
    rep.horizon = horizon;
    rep.n4.assign(K.size(), std::nullopt);

    // boolean right-iteration of the K-indicator through positive entries
    std::vector<bool> hit(k.size(), false);
    for (std::size_t x : K.indices()) hit[x] = true;
    std::vector<int> last_zero(K.size(), 0);
    for (int n = 1; n <= horizon; ++n) {
        std::vector<bool> next(k.size(), false);
        for (std::size_t i = 0; i < k.size(); ++i) {
            bool v = false;
            k.for_each_in_row(i, [&](std::size_t j, double) { v = v || hit[j]; });
            next[i] = v;
        }
        hit = std::move(next);
        for (std::size_t q = 0; q < K.size(); ++q)
            if (!hit[K.indices()[q]]) last_zero[q] = n;
    }
    // a certificate needs positivity on at least the last two steps; a single
    // positive endpoint is what a periodic chain produces at half the horizons
    rep.all_ok = true;
    for (std::size_t q = 0; q < K.size(); ++q) {
        if (hit[K.indices()[q]] && last_zero[q] <= horizon - 2)
            rep.n4[q] = last_zero[q] + 1;
        else
            rep.all_ok = false;
    }
    return rep;
}

DominationResult check_domination(const SubKernel& k, const StateSet& K, int n0, int m0) {
    if (K.empty()) throw Precondition("check_domination: K must be nonempty");
    if (!(n0 >= 1 && n0 <= m0)) throw Precondition("check_domination: need 1 <= n0 <= m0");

    DominationResult res;
    res.n0 = n0;
    res.m0 = m0;

    // columns P^t(., z) for z in K, snapshot at t = n0 and t = m0
    std::vector<Eigen::VectorXd> col_n0, col_m0;
    for (std::size_t z : K.indices()) {
        Eigen::VectorXd col = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(k.size()));
        col(static_cast<Eigen::Index>(z)) = 1.0;
        for (int t = 1; t <= m0; ++t) {
            col = k.apply_right(col);
            if (t == n0) col_n0.push_back(col);
        }
        col_m0.push_back(col);
    }

    res.ok = true;
    res.C = 0;
    for (std::size_t q = 0; q < K.size(); ++q) {
        Eigen::Index arg_max = 0;
        double num = col_n0[q].maxCoeff(&arg_max);
        if (num <= 0) continue;
        double den = std::numeric_limits<double>::infinity();
        std::size_t arg_min = K.indices()[0];
        for (std::size_t y : K.indices()) {
            double v = col_m0[q](static_cast<Eigen::Index>(y));
            if (v < den) {
                den = v;
                arg_min = y;
            }
        }
        if (den <= 0) {
            res.ok = false;
            res.witness_x = static_cast<std::size_t>(arg_max);
            res.witness_y = arg_min;
            res.witness_z = K.indices()[q];
            res.C = std::numeric_limits<double>::infinity();
            return res;
        }
        res.C = std::max(res.C, num / den);
    }
    return res;
}

LyapunovCertificate improve_theta2(const SubKernel& k, const LyapunovCertificate& cert,
                                   const QsdSolution& sol, double theta2_new, int horizon) {
    if (!(theta2_new > cert.theta1))
        throw Precondition("improve_theta2: theta2_new must exceed theta1");
    if (!(theta2_new < sol.theta0))
        throw Precondition("improve_theta2: theta2_new must stay below theta0 (boundary of the "
                           "improvement lemma)");
    auto built = construct_phi2(k, cert.K, theta2_new, horizon);
    auto revalidated = check_E2(k, cert.K, cert.phi1, built.phi2);
    revalidated.theta2 = theta2_new;  // the certified constant; extracted slack is at least this
    revalidated.phi2_slack = k.apply_right(built.phi2) - theta2_new * built.phi2;
    revalidated.pass = revalidated.theta1 < theta2_new &&
                       revalidated.phi2_slack.minCoeff() > -1e-10;
    return revalidated;
}

double domain_exponent(const LyapunovCertificate& cert) {
    if (!(cert.theta1 > 0)) return std::numeric_limits<double>::infinity();
    return std::log(cert.theta1) / std::log(cert.theta2);
}

UniformReport check_uniform(const SubKernel& k, const LyapunovCertificate& cert, int horizon) {
    UniformReport rep;
    rep.sup_phi1 = cert.phi1.maxCoeff();

    Eigen::VectorXd u = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(k.size()));
    for (std::size_t x : cert.K.indices()) u(static_cast<Eigen::Index>(x)) = 1.0;
    Eigen::VectorXd s = Eigen::VectorXd::Ones(static_cast<Eigen::Index>(k.size()));

    for (int n = 1; n <= horizon; ++n) {
        u = k.apply_right(u);
        s = k.apply_right(s);
        double c = std::numeric_limits<double>::infinity();
        for (std::size_t x = 0; x < k.size(); ++x) {
            double surv = s(static_cast<Eigen::Index>(x));
            if (surv <= 0) continue;  // no surviving path from x; vacuous
            c = std::min(c, u(static_cast<Eigen::Index>(x)) / surv);
        }
        if (std::isfinite(c) && c > 0) {
            rep.ok = true;
            rep.n4prime = n;
            rep.c_underbar = c;
            return rep;
        }
        double mx = std::max(u.maxCoeff(), s.maxCoeff());
        if (mx > 0 && mx < 1e-250) {
            u /= mx;
            s /= mx;
        }
    }
    rep.ok = false;
    rep.c_underbar = 0;
    rep.n4prime = horizon;
    return rep;
}

// ---------------------------------------------------------------------------
// Continuous time

RateMatrix RateMatrix::from_triplets(
    StateSpacePtr space, const std::vector<std::tuple<std::size_t, std::size_t, double>>& jump_rates,
    Eigen::VectorXd kill_rates) {
    RateMatrix q;
    q.space_ = std::move(space);
    const std::size_t n = q.space_->size();
    if (static_cast<std::size_t>(kill_rates.size()) != n)
        throw DimensionMismatch(kill_rates.size(), n, "kill rates");
    if (kill_rates.minCoeff() < 0) throw Precondition("negative killing rate");

    std::vector<std::tuple<std::size_t, std::size_t, double>> sorted;
    sorted.reserve(jump_rates.size());
    for (const auto& [i, j, w] : jump_rates) {
        if (i >= n || j >= n) throw DimensionMismatch(std::max(i, j), n, "rate triplet index");
        if (i == j) throw Precondition("diagonal rate entries are implied; do not set them");
        if (w < 0 || !std::isfinite(w)) throw Precondition("invalid jump rate");
        if (w != 0.0) sorted.emplace_back(i, j, w);
    }
    std::sort(sorted.begin(), sorted.end(), [](const auto& l, const auto& r) {
        return std::tie(std::get<0>(l), std::get<1>(l)) < std::tie(std::get<0>(r), std::get<1>(r));
    });
    q.offsets_.assign(n + 1, 0);
    for (std::size_t m = 0; m < sorted.size();) {
        const std::size_t row = std::get<0>(sorted[m]);
        const std::size_t col = std::get<1>(sorted[m]);
        double acc = 0;
        while (m < sorted.size() && std::get<0>(sorted[m]) == row && std::get<1>(sorted[m]) == col)
            acc += std::get<2>(sorted[m++]);
        q.cols_.push_back(col);
        q.vals_.push_back(acc);
        ++q.offsets_[row + 1];
    }
    for (std::size_t r = 0; r < n; ++r) q.offsets_[r + 1] += q.offsets_[r];
    q.jump_sums_ = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(n));
    for (std::size_t i = 0; i < n; ++i) {
        double s = 0;
        for (std::size_t p = q.offsets_[i]; p < q.offsets_[i + 1]; ++p) s += q.vals_[p];
        q.jump_sums_(static_cast<Eigen::Index>(i)) = s;
    }
    q.kill_ = std::move(kill_rates);
    return q;
}

double RateMatrix::jump_rate(std::size_t i, std::size_t j) const {
    for (std::size_t p = offsets_[i]; p < offsets_[i + 1]; ++p)
        if (cols_[p] == j) return vals_[p];
    return 0.0;
}

double RateMatrix::max_exit_rate() const {
    double mx = 0;
    for (std::size_t i = 0; i < size(); ++i) mx = std::max(mx, exit_rate(i));
    return mx;
}

Eigen::VectorXd RateMatrix::apply_generator(const Eigen::VectorXd& f) const {
    if (static_cast<std::size_t>(f.size()) != size())
        throw DimensionMismatch(f.size(), size(), "apply_generator");
    Eigen::VectorXd out(f.size());
    for (std::size_t i = 0; i < size(); ++i) {
        double acc = -exit_rate(i) * f(static_cast<Eigen::Index>(i));
        for (std::size_t p = offsets_[i]; p < offsets_[i + 1]; ++p)
            acc += vals_[p] * f(static_cast<Eigen::Index>(cols_[p]));
        out(static_cast<Eigen::Index>(i)) = acc;
    }
    return out;
}

GeneratorDriftReport check_generator_lyapunov(const RateMatrix& Q, const Eigen::VectorXd& phi,
                                              const StateSet& D0,
                                              std::optional<double> lambda0_estimate) {
    if (static_cast<std::size_t>(phi.size()) != Q.size())
        throw DimensionMismatch(phi.size(), Q.size(), "check_generator_lyapunov");
    if (phi.minCoeff() < 1.0 - 1e-12)
        throw Precondition("check_generator_lyapunov: phi must be >= 1 on the space");

    Eigen::VectorXd lphi = Q.apply_generator(phi);
    GeneratorDriftReport rep;
    rep.lambda1 = std::numeric_limits<double>::infinity();
    for (std::size_t x = 0; x < Q.size(); ++x) {
        if (D0.contains(x)) continue;
        double ratio = -lphi(static_cast<Eigen::Index>(x)) / phi(static_cast<Eigen::Index>(x));
        if (ratio < rep.lambda1) {
            rep.lambda1 = ratio;
            rep.witness = x;
        }
    }
    if (!std::isfinite(rep.lambda1)) rep.lambda1 = 0;  // D0 = E
    rep.C = 0;
    for (std::size_t x : D0.indices()) {
        double excess = lphi(static_cast<Eigen::Index>(x)) +
                        rep.lambda1 * phi(static_cast<Eigen::Index>(x));
        rep.C = std::max(rep.C, excess);
    }
    rep.drift_ok = rep.lambda1 > 0;
    if (lambda0_estimate) rep.beats_lambda0 = rep.lambda1 > *lambda0_estimate;
    return rep;
}

SubKernel uniformize(const RateMatrix& Q, double Lambda) {
    double needed = Q.max_exit_rate();
    if (Lambda < needed)
        throw Precondition("uniformize: Lambda = " + std::to_string(Lambda) +
                           " below the maximal exit rate " + std::to_string(needed));
    std::vector<std::tuple<std::size_t, std::size_t, double>> trip;
    for (std::size_t i = 0; i < Q.size(); ++i) {
        Q.for_each_jump(i, [&](std::size_t j, double w) { trip.emplace_back(i, j, w / Lambda); });
        double stay = 1.0 - Q.exit_rate(i) / Lambda;
        if (stay > 0) trip.emplace_back(i, i, stay);
    }
    return SubKernel::from_triplets(Q.space(), trip);
}

FCertificate check_F(const SubKernel& k, const StateSet& L, const Eigen::VectorXd& psi1, int t2,
                     int horizon, std::optional<double> gamma2_opt) {
    if (L.empty()) throw Precondition("check_F: L must be nonempty");
    if (t2 < 1) throw Precondition("check_F: t2 must be >= 1");
    if (static_cast<std::size_t>(psi1.size()) != k.size())
        throw DimensionMismatch(psi1.size(), k.size(), "check_F psi1");
    if (psi1.minCoeff() < 1.0 - 1e-12) throw Precondition("check_F: psi1 must be >= 1");

    FCertificate cert;
    cert.L = L;
    cert.t2 = t2;
    cert.psi1 = psi1;

    // (F2) line 1: survival-and-avoidance moment over t2 steps off L
    std::vector<std::size_t> offL = L.complement().indices();
    cert.gamma1 = 0;
    if (!offL.empty()) {
        Eigen::VectorXd f(static_cast<Eigen::Index>(offL.size()));
        for (std::size_t q = 0; q < offL.size(); ++q)
            f(static_cast<Eigen::Index>(q)) = psi1(static_cast<Eigen::Index>(offL[q]));
        for (int t = 0; t < t2; ++t) f = k.apply_right_on(offL, f);
        for (std::size_t q = 0; q < offL.size(); ++q) {
            double ratio = f(static_cast<Eigen::Index>(q)) /
                           psi1(static_cast<Eigen::Index>(offL[q]));
            double g = std::pow(ratio, 1.0 / static_cast<double>(t2));
            if (g > cert.gamma1) {
                cert.gamma1 = g;
                cert.witness = offL[q];
            }
        }
    }

    // (F2) line 2: c2 = sup over L, t <= t2 of E_x psi1(X_t) 1_{t<absorption}
    {
        Eigen::VectorXd f = psi1;
        for (int t = 0; t <= t2; ++t) {
            for (std::size_t x : L.indices())
                cert.c2 = std::max(cert.c2, f(static_cast<Eigen::Index>(x)));
            if (t < t2) f = k.apply_right(f);
        }
    }

    // (F2) line 3: growth of gamma2^{-t} inf_L P_x(X_t in L)
    std::vector<double> log_inf;  // log inf_L P^t 1_L, t = 0..horizon
    {
        Eigen::VectorXd u = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(k.size()));
        for (std::size_t x : L.indices()) u(static_cast<Eigen::Index>(x)) = 1.0;
        double log_scale = 0;
        log_inf.push_back(0.0);
        for (int t = 1; t <= horizon; ++t) {
            u = k.apply_right(u);
            double mx = u.maxCoeff();
            if (mx > 0 && mx < 1e-250) {
                u /= mx;
                log_scale += std::log(mx);
            }
            double lo = std::numeric_limits<double>::infinity();
            for (std::size_t x : L.indices())
                lo = std::min(lo, u(static_cast<Eigen::Index>(x)));
            log_inf.push_back(lo > 0 ? std::log(lo) + log_scale
                                     : -std::numeric_limits<double>::infinity());
        }
    }
    double growth = 0;  // geometric growth rate of inf_L P^t 1_L
    {
        std::deque<double> ratios;
        for (int t = std::max(1, horizon - 10); t <= horizon; ++t) {
            double a = log_inf[static_cast<std::size_t>(t - 1)];
            double b = log_inf[static_cast<std::size_t>(t)];
            if (std::isfinite(a) && std::isfinite(b)) ratios.push_back(std::exp(b - a));
        }
        for (double r : ratios) growth += r;
        if (!ratios.empty()) growth /= static_cast<double>(ratios.size());
    }
    cert.gamma2 = gamma2_opt.value_or(growth * (1.0 - 1e-6));

    bool line3_ok = false;
    if (cert.gamma2 > 0 && std::isfinite(log_inf.back())) {
        double at_end = log_inf.back() - horizon * std::log(cert.gamma2);
        double at_mid = log_inf[static_cast<std::size_t>(horizon / 2)] -
                        (horizon / 2) * std::log(cert.gamma2);
        cert.growth_at_horizon = std::exp(std::min(at_end, 700.0));
        line3_ok = at_end > at_mid;
    }

    // (F1): smallest t1 with a common minorization on L
    bool line1_ok = false;
    {
        auto rows = k_rows_at(k, L, 0);
        for (int t = 1; t <= std::min(horizon, 100); ++t) {
            for (auto& r : rows) r = k.apply_left(r);
            double c1 = 0;
            for (std::size_t y : L.indices()) {
                double lo = std::numeric_limits<double>::infinity();
                for (const auto& r : rows) lo = std::min(lo, r(static_cast<Eigen::Index>(y)));
                c1 += lo;
            }
            if (c1 > 0) {
                cert.t1 = t;
                cert.c1 = c1;
                line1_ok = true;
                break;
            }
        }
    }

    // (F3): Harnack ratio bound on L up to the horizon
    bool line4_ok = true;
    {
        Eigen::VectorXd s = Eigen::VectorXd::Ones(static_cast<Eigen::Index>(k.size()));
        for (int t = 0; t <= horizon; ++t) {
            if (t > 0) {
                s = k.apply_right(s);
                double mx = s.maxCoeff();
                if (mx > 0 && mx < 1e-250) s /= mx;
            }
            double hi = 0, lo = std::numeric_limits<double>::infinity();
            std::size_t dead = 0;
            for (std::size_t y : L.indices()) {
                double v = s(static_cast<Eigen::Index>(y));
                hi = std::max(hi, v);
                if (v < lo) {
                    lo = v;
                    dead = y;
                }
            }
            if (lo <= 0) {
                line4_ok = false;
                cert.witness = dead;
                break;
            }
            cert.c3 = std::max(cert.c3, hi / lo);
        }
    }

    // psi2 = sum_{j=0}^{n_0} gamma2^{-j t2} P_x(X_{j t2} in L), normalized to sup 1
    {
        int n0 = std::min(50, horizon / std::max(1, t2));
        Eigen::VectorXd u = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(k.size()));
        for (std::size_t x : L.indices()) u(static_cast<Eigen::Index>(x)) = 1.0;
        Eigen::VectorXd acc = u;
        double coeff = 1.0;
        for (int j = 1; j <= n0; ++j) {
            for (int s = 0; s < t2; ++s) u = k.apply_right(u);
            coeff /= std::pow(cert.gamma2 > 0 ? cert.gamma2 : 1.0, t2);
            if (coeff > 1e250) {
                acc /= coeff;
                coeff = 1.0;
            }
            acc += coeff * u;
        }
        double mx = acc.maxCoeff();
        cert.psi2 = mx > 0 ? Eigen::VectorXd(acc / mx) : acc;
    }

    bool order_ok = cert.gamma1 < cert.gamma2;
    cert.pass = line1_ok && order_ok && line3_ok && line4_ok;
    if (!line1_ok)
        cert.failed_line = "F1: no common minorization on L within the search window";
    else if (!order_ok)
        cert.failed_line = "F2: gamma1 >= gamma2";
    else if (!line3_ok)
        cert.failed_line = "F2: gamma2^{-t} P_x(X_t in L) shows no growth up to the horizon";
    else if (!line4_ok)
        cert.failed_line = "F3: survival vanished on L";
    return cert;
}

std::string certificate_to_json(const LyapunovCertificate& cert) {
    nlohmann::ordered_json doc;
    doc["pass"] = cert.pass;
    doc["K"] = cert.K.indices();
    doc["theta1"] = cert.theta1;
    doc["theta2"] = cert.theta2;
    doc["c2"] = cert.c2;
    doc["theta1_witness"] = cert.theta1_witness;
    doc["theta2_witness"] = cert.theta2_witness;
    doc["phi1"] = std::vector<double>(cert.phi1.begin(), cert.phi1.end());
    doc["phi2"] = std::vector<double>(cert.phi2.begin(), cert.phi2.end());
    return doc.dump(2);
}

}  // namespace qsdlab
