#include "qsdlab/diffusion1d.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <queue>

#include <Eigen/LU>

namespace qsdlab::diffusion1d {

namespace {

// 15-point Kronrod rule with embedded 7-point Gauss (QUADPACK dqk15 constants)
constexpr double kXgk[8] = {
    0.991455371120812639206854697526329, 0.949107912342758524526189684047851,
    0.864864423359769072789712788640926, 0.741531185599394439863864773280788,
    0.586087235467691130294144838258730, 0.405845151377397166906606412076961,
    0.207784955007898467600689403773245, 0.0};
constexpr double kWgk[8] = {
    0.022935322010529224963732008058970, 0.063092092629978553290700663189204,
    0.104790010322250183839876322541518, 0.140653259715525918745189590510238,
    0.169004726639267902826583426598550, 0.190350578064785409913256402421014,
    0.204432940075298892414161999234649, 0.209482141084727828012999174891714};
constexpr double kWg[4] = {
    0.129484966168869693270611432679082, 0.279705391489276667901467771423780,
    0.381830050505118944950369775488975, 0.417959183673469387755102040816327};

struct Panel {
    double a, b, val, err;
    bool operator<(const Panel& o) const { return err < o.err; }
};

Panel gk15(const std::function<double(double)>& f, double a, double b) {
    const double c = 0.5 * (a + b), h = 0.5 * (b - a);
    double fc = f(c);
    double res_k = kWgk[7] * fc, res_g = kWg[3] * fc;
    for (int i = 0; i < 7; ++i) {
        double fp = f(c + h * kXgk[i]), fm = f(c - h * kXgk[i]);
        res_k += kWgk[i] * (fp + fm);
        if (i % 2 == 1) res_g += kWg[(i - 1) / 2] * (fp + fm);
    }
    return {a, b, res_k * h, std::abs(res_k - res_g) * std::abs(h)};
}

/// Globally adaptive quadrature with a hard panel budget: refines the worst
/// panel until the summed error estimate drops under max(abs_tol, rel_tol|I|).
double adaptive_integrate(const std::function<double(double)>& f, double a, double b,
                          double* err_out = nullptr, double abs_tol = 1e-12,
                          double rel_tol = 1e-12, int max_panels = 512) {
    if (a == b) {
        if (err_out) *err_out = 0;
        return 0;
    }
    std::priority_queue<Panel> queue;
    queue.push(gk15(f, a, b));
    double total_val = queue.top().val, total_err = queue.top().err;
    int panels = 1;
    while (total_err > std::max(abs_tol, rel_tol * std::abs(total_val)) && panels < max_panels) {
        Panel worst = queue.top();
        queue.pop();
        total_val -= worst.val;
        total_err -= worst.err;
        double mid = 0.5 * (worst.a + worst.b);
        if (mid <= worst.a || mid >= worst.b) {  // interval at roundoff width
            total_val += worst.val;
            total_err += worst.err;
            break;
        }
        Panel left = gk15(f, worst.a, mid), right = gk15(f, mid, worst.b);
        total_val += left.val + right.val;
        total_err += left.err + right.err;
        queue.push(left);
        queue.push(right);
        ++panels;
    }
    if (err_out) *err_out = total_err;
    return total_val;
}

double integrate(const std::function<double(double)>& f, double a, double b, double* err = nullptr) {
    return adaptive_integrate(f, a, b, err);
}

double drift_potential(const Diffusion1dSpec& spec, double from, double to, double* err = nullptr) {
    return adaptive_integrate(
        [&](double u) {
            double s = spec.sigma(u);
            return spec.drift(u) / (s * s);
        },
        from, to, err, 1e-13, 1e-13, 128);
}

}  // namespace

ScaleResult scale(const Diffusion1dSpec& spec, double x) {
    ScaleResult out;
    double e1 = 0;
    out.delta = std::exp(-2.0 * drift_potential(spec, spec.alpha0, x, &e1));
    out.delta_error = 2.0 * e1 * out.delta;
    double e2 = 0;
    out.s = integrate(
        [&](double u) { return std::exp(-2.0 * drift_potential(spec, spec.alpha0, u)); },
        spec.alpha0, x, &e2);
    out.s_error = e2;
    return out;
}

namespace {

/// Dyadic points marching from `start` toward the boundary.
std::vector<double> dyadic_points(double boundary, double start, int count) {
    std::vector<double> pts{start};
    if (std::isfinite(boundary)) {
        double gap = std::abs(start - boundary);
        for (int k = 1; k <= count; ++k)
            pts.push_back(boundary + (start > boundary ? 1.0 : -1.0) * gap / std::pow(2.0, k));
    } else {
        double step = std::max(1.0, std::abs(start));
        for (int k = 1; k <= count; ++k)
            pts.push_back(start + (boundary > 0 ? 1.0 : -1.0) * step * (std::pow(2.0, k) - 1.0));
    }
    return pts;
}

struct CascadeResult {
    bool finite = false;
    bool divergent = false;
    double value = 0;  // shell sum plus a geometric tail estimate when finite
    int shells = 0;
    std::vector<double> pieces;  // pieces[k] for k >= 1, including the tail estimate
};

/// Classifies the improper integral whose dyadic shell values come from
/// `shell_value(k, lo, hi)`. Divergent: shells stop decaying (three in a row
/// not below the previous by a margin). Finite: shells either fall under an
/// absolute floor or decay geometrically long enough to extrapolate the tail.
CascadeResult run_cascade(const std::vector<double>& pts,
                          const std::function<double(std::size_t, double, double)>& shell_value) {
    CascadeResult res;
    res.pieces.assign(pts.size(), 0.0);
    double sum = 0, prev = -1;
    int not_decaying = 0, decaying = 0;
    double last_ratio = 0;
    for (std::size_t k = 1; k < pts.size(); ++k) {
        double lo = std::min(pts[k], pts[k - 1]), hi = std::max(pts[k], pts[k - 1]);
        double p = shell_value(k, lo, hi);
        res.pieces[k] = p;
        sum += p;
        res.shells = static_cast<int>(k);
        if (!std::isfinite(p) || !std::isfinite(sum)) {
            res.divergent = true;
            return res;
        }
        if (prev >= 0 && prev > 0) {
            last_ratio = p / prev;
            not_decaying = last_ratio >= 1.0 - 1e-6 ? not_decaying + 1 : 0;
            decaying = last_ratio <= 0.95 ? decaying + 1 : 0;
            if (not_decaying >= 3) {
                res.divergent = true;
                res.value = sum;
                return res;
            }
        }
        if (p <= 1e-12 * std::max(1.0, std::abs(sum))) {
            res.finite = true;
            res.value = sum;
            return res;
        }
        if (decaying >= 6) {
            double tail = p * last_ratio / (1.0 - last_ratio);
            if (tail <= 1e-10 * std::max(1.0, std::abs(sum))) {
                res.finite = true;
                res.value = sum + tail;
                res.pieces[k] += tail;
                return res;
            }
        }
        prev = p;
    }
    res.value = sum;  // neither settled nor clearly divergent
    return res;
}

}  // namespace

ReachReport reachable(const Diffusion1dSpec& spec, Side side) {
    const double boundary = side == Side::Lower ? spec.alpha : spec.beta;
    ReachReport rep;

    auto pts = dyadic_points(boundary, spec.alpha0, 96);
    const std::size_t K = pts.size();

    // telescoped drift potential at the shell endpoints: every quadrature
    // below stays local to one shell, so there is no long-range cancellation
    std::vector<double> pot(K, 0.0);
    for (std::size_t k = 1; k < K; ++k)
        pot[k] = pot[k - 1] + drift_potential(spec, pts[k - 1], pts[k]);
    auto delta_in_shell = [&](std::size_t k, double u) {
        // u between pts[k] and pts[k-1]
        return std::exp(-2.0 * (pot[k] + drift_potential(spec, pts[k], u)));
    };

    // scale increment cascade
    auto sc = run_cascade(pts, [&](std::size_t k, double lo, double hi) {
        return integrate([&](double u) { return delta_in_shell(k, u); }, lo, hi);
    });
    rep.shells_used = sc.shells;
    if (sc.divergent) {
        rep.scale_finite = false;
        rep.verdict = Reachability::Unreachable;
        return rep;
    }
    if (!sc.finite) {
        rep.verdict = Reachability::Inconclusive;
        return rep;
    }
    rep.scale_finite = true;
    rep.scale_limit = side == Side::Lower ? -sc.value : sc.value;  // s relative to alpha0

    // tail mass beyond each shell endpoint: |s(pts[k]) - s(boundary)|
    std::vector<double> tail(K, 0.0);
    for (std::size_t k = K - 1; k >= 1; --k) tail[k - 1] = tail[k] + sc.pieces[k];

    // second integral, shell by shell; the gap is tail + a local increment
    auto ic = run_cascade(pts, [&](std::size_t k, double lo, double hi) {
        auto integrand = [&](double x) {
            double local = std::abs(integrate([&](double u) { return delta_in_shell(k, u); },
                                              std::min(pts[k], x), std::max(pts[k], x)));
            double gap = tail[k] + local;
            double sg = spec.sigma(x);
            return gap / (sg * sg * delta_in_shell(k, x));
        };
        return integrate(integrand, lo, hi);
    });
    if (ic.divergent) {
        rep.integral_finite = false;
        rep.verdict = Reachability::Unreachable;
        return rep;
    }
    if (!ic.finite) {
        rep.verdict = Reachability::Inconclusive;
        return rep;
    }
    rep.integral_finite = true;
    rep.integral = ic.value;
    rep.verdict = Reachability::Reachable;
    return rep;
}

double lambda0_bound_1(const Diffusion1dSpec& spec, double a, double b, int grid) {
    if (!(a < b) || !(a > spec.alpha) || !(b < spec.beta) ||
        !std::isfinite(a) || !std::isfinite(b))
        throw Precondition("lambda0_bound_1: need alpha < a < b < beta, finite");

    auto rel_delta = [&](double x) { return std::exp(-2.0 * drift_potential(spec, a, x)); };
    double denom = integrate(rel_delta, a, b);  // s(b) - s(a) in the a-based scale

    auto sup_on = [&](int n) {
        double mx = -std::numeric_limits<double>::infinity();
        for (int i = 0; i <= n; ++i) {
            double x = a + (b - a) * i / n;
            double val = 0.5 * std::pow(M_PI * spec.sigma(x) * rel_delta(x) / denom, 2) +
                         spec.kappa(x);
            mx = std::max(mx, val);
        }
        return mx;
    };
    double coarse = sup_on(grid), fine = sup_on(2 * grid);
    return fine + std::max(0.0, fine - coarse);  // refinement safety margin
}

namespace {

double stable_derivative(const std::function<double(double)>& f, double x) {
    const double h = 1e-5;
    double d1 = (f(x + h) - f(x - h)) / (2 * h);
    double d2 = (f(x + h / 2) - f(x - h / 2)) / h;
    double scale = std::max({1.0, std::abs(d1), std::abs(d2)});
    if (std::abs(d1 - d2) > 1e-4 * scale) throw DerivativeInstability(x, std::abs(d1 - d2) / scale);
    return d2;
}

}  // namespace

double lambda0_bound_2(const Diffusion1dSpec& spec, double a, double b, int grid) {
    if (!(a < b) || !std::isfinite(a) || !std::isfinite(b))
        throw Precondition("lambda0_bound_2: need finite a < b");
    auto half_potential = [&](double x) {
        double s = spec.sigma(x);
        return spec.drift(x) / (2 * s * s);
    };
    auto sup_on = [&](int n) {
        double mx = -std::numeric_limits<double>::infinity();
        for (int i = 0; i <= n; ++i) {
            double x = a + (b - a) * i / n;
            double sg = spec.sigma(x);
            double val = M_PI * M_PI * sg * sg / (2 * (b - a) * (b - a)) +
                         sg * sg * stable_derivative(half_potential, x) +
                         spec.drift(x) * spec.drift(x) / (2 * sg * sg) + spec.kappa(x);
            mx = std::max(mx, val);
        }
        return mx;
    };
    double coarse = sup_on(grid), fine = sup_on(2 * grid);
    return fine + std::max(0.0, fine - coarse);
}

PhiCandidate phi_candidates(const Diffusion1dSpec& spec, PhiKind kind, double a_minus, double a0,
                            double a_plus) {
    if (!(a_minus < a0 && a0 < a_plus))
        throw Precondition("phi_candidates: need a_minus < a0 < a_plus");

    PhiCandidate out;
    Diffusion1dSpec based = spec;
    based.alpha0 = a0;

    if (kind == PhiKind::SqrtScale) {
        auto s_of = [based](double x) { return scale(based, x).s; };
        double sp = s_of(a_plus), sm = s_of(a_minus);
        if (!(sp > 0) || !(sm < 0))
            throw Precondition("phi_candidates: scale not sign-definite outside [a_minus, a_plus]");
        double phim = std::sqrt(-sm), phip = std::sqrt(sp);
        out.phi = [s_of, a_minus, a_plus, phim, phip](double x) {
            if (x >= a_plus) return std::sqrt(std::max(s_of(x), 0.0));
            if (x <= a_minus) return std::sqrt(std::max(-s_of(x), 0.0));
            double t = (x - a_minus) / (a_plus - a_minus);
            return phim + (phip - phim) * 0.5 * (1.0 - std::cos(M_PI * t));
        };
        auto coeff = [&](double x) {
            auto sc = scale(based, x);
            return sc.delta * spec.sigma(x) * sc.delta * spec.sigma(x) / (8 * sc.s * sc.s) +
                   spec.kappa(x);
        };
        double span = a_plus - a_minus;
        for (int k = 0; k < 24; ++k) {
            double xr = a_plus + span * 0.25 * std::pow(1.35, k);
            if (xr < spec.beta) out.report.push_back({xr, coeff(xr)});
            double xl = a_minus - span * 0.25 * std::pow(1.35, k);
            if (xl > spec.alpha) out.report.push_back({xl, coeff(xl)});
        }
    } else {
        out.phi = [spec, a0](double x) { return std::exp(-drift_potential(spec, a0, x)); };
        auto half_potential = [&](double x) {
            double s = spec.sigma(x);
            return spec.drift(x) / (s * s);
        };
        auto coeff = [&](double x) {
            double sg = spec.sigma(x);
            return spec.drift(x) * spec.drift(x) / (2 * sg * sg) +
                   0.5 * sg * sg * stable_derivative(half_potential, x) + spec.kappa(x);
        };
        double span = a_plus - a_minus;
        for (int k = 0; k < 24; ++k) {
            double xr = a_plus + span * 0.25 * std::pow(1.35, k);
            if (xr < spec.beta) out.report.push_back({xr, coeff(xr)});
            double xl = a_minus - span * 0.25 * std::pow(1.35, k);
            if (xl > spec.alpha) out.report.push_back({xl, coeff(xl)});
        }
    }
    return out;
}

namespace {

/// generator drift rate -(1/2 sigma^2 phi'' + b phi' - kappa phi)/phi at x
double drift_rate(const Diffusion1dSpec& spec, const std::function<double(double)>& phi,
                  double x) {
    const double h = 1e-5 * std::max(1.0, std::abs(x));
    double p0 = phi(x), pp = phi(x + h), pm = phi(x - h);
    double d1 = (pp - pm) / (2 * h);
    double d2 = (pp - 2 * p0 + pm) / (h * h);
    double sg = spec.sigma(x);
    return -(0.5 * sg * sg * d2 + spec.drift(x) * d1 - spec.kappa(x) * p0) / p0;
}

double min_rate_on_tail(const Diffusion1dSpec& spec, const std::function<double(double)>& phi,
                        double from, bool upward) {
    double lo = std::numeric_limits<double>::infinity();
    double boundary = upward ? spec.beta : spec.alpha;
    for (int k = 0; k < 48; ++k) {
        double x;
        if (std::isfinite(boundary)) {
            double t = (k + 0.5) / 48.0;
            x = from + (boundary - from) * t * 0.999;
        } else {
            x = from + (upward ? 1.0 : -1.0) * std::max(1.0, std::abs(from)) *
                           (std::pow(1.25, k) - 0.9);
        }
        lo = std::min(lo, drift_rate(spec, phi, x));
    }
    return lo;
}

}  // namespace

ConditionSelection select_condition(const Diffusion1dSpec& spec,
                                    const std::function<double(double)>& phi, double x0, double x1,
                                    double lambda0_estimate) {
    ConditionSelection sel;
    auto lower = reachable(spec, Side::Lower);
    if (lower.verdict == Reachability::Reachable) {
        auto upper = reachable(spec, Side::Upper);
        if (upper.verdict == Reachability::Reachable) {
            sel.label = ConditionLabel::I;
            return sel;
        }
        double lam = min_rate_on_tail(spec, phi, x1, true);
        if (lam > lambda0_estimate) {
            sel.label = ConditionLabel::II;
            sel.lambda1 = lam;
            sel.margin = lam - lambda0_estimate;
            return sel;
        }
    }
    double lam = std::min(min_rate_on_tail(spec, phi, x1, true),
                          min_rate_on_tail(spec, phi, x0, false));
    if (lam > lambda0_estimate) {
        sel.label = ConditionLabel::III;
        sel.lambda1 = lam;
        sel.margin = lam - lambda0_estimate;
        return sel;
    }
    sel.label = ConditionLabel::None;
    sel.lambda1 = lam;
    sel.margin = lam - lambda0_estimate;
    return sel;
}

namespace {

double fd_smallest_eigenvalue(const Diffusion1dSpec& spec, double a, double b, int mesh,
                              Eigen::VectorXd* left_out, Eigen::VectorXd* xs_out) {
    const int n = mesh - 1;  // interior nodes
    const double h = (b - a) / mesh;
    Eigen::MatrixXd A = Eigen::MatrixXd::Zero(n, n);  // A = -L
    Eigen::VectorXd xs(n);
    for (int i = 0; i < n; ++i) {
        double x = a + (i + 1) * h;
        xs(i) = x;
        double sg = spec.sigma(x), bb = spec.drift(x);
        double diff = 0.5 * sg * sg / (h * h), conv = bb / (2 * h);
        if (i > 0) A(i, i - 1) = -(diff - conv);
        A(i, i) = 2 * diff + spec.kappa(x);
        if (i < n - 1) A(i, i + 1) = -(diff + conv);
    }
    Eigen::PartialPivLU<Eigen::MatrixXd> lu(A);
    Eigen::PartialPivLU<Eigen::MatrixXd> lut(A.transpose());
    Eigen::VectorXd u = Eigen::VectorXd::Ones(n), v = Eigen::VectorXd::Ones(n);
    double lambda = 0;
    for (int it = 0; it < 500; ++it) {
        Eigen::VectorXd nu_ = lu.solve(u);
        Eigen::VectorXd nv = lut.solve(v);
        nu_ /= nu_.lpNorm<Eigen::Infinity>();
        nv /= nv.lpNorm<Eigen::Infinity>();
        double du = (nu_ - u).lpNorm<Eigen::Infinity>();
        double dv = (nv - v).lpNorm<Eigen::Infinity>();
        u = std::move(nu_);
        v = std::move(nv);
        lambda = v.dot(A * u) / v.dot(u);
        if (du < 1e-14 && dv < 1e-14) break;
    }
    if (u.minCoeff() * u.maxCoeff() < 0)
        throw Precondition("fd_eigen: computed eigenfunction changes sign");
    if (u.sum() < 0) u = -u;
    if (v.sum() < 0) v = -v;
    if (left_out) *left_out = v;
    if (xs_out) *xs_out = xs;
    return lambda;
}

}  // namespace

FdEigenResult fd_eigen(const Diffusion1dSpec& spec, double a, double b, int mesh) {
    if (mesh < 16) throw Precondition("fd_eigen: mesh must be >= 16");
    FdEigenResult out;
    Eigen::VectorXd left;
    out.lambda0_raw = fd_smallest_eigenvalue(spec, a, b, mesh, &left, &out.xs);
    double coarse = fd_smallest_eigenvalue(spec, a, b, mesh / 2, nullptr, nullptr);
    out.lambda0 = out.lambda0_raw + (out.lambda0_raw - coarse) / 3.0;  // h^2 Richardson
    left = left.cwiseMax(0.0);
    out.density = left / left.sum();
    return out;
}

}  // namespace qsdlab::diffusion1d
