#include <doctest.h>

#include <cmath>

#include "qsdlab/diffusion1d.hpp"
#include "qsdlab/models.hpp"
#include "qsdlab/spectral.hpp"

using namespace qsdlab;
using namespace qsdlab::diffusion1d;

namespace {

Diffusion1dSpec brownian01() {
    return {[](double) { return 0.0; }, [](double) { return 1.0; }, [](double) { return 0.0; },
            0.0, 1.0, 0.5};
}

Diffusion1dSpec ou_line() {  // b = -x, sigma = 1 on R
    return {[](double x) { return -x; }, [](double) { return 1.0; }, [](double) { return 0.0; },
            -std::numeric_limits<double>::infinity(), std::numeric_limits<double>::infinity(),
            0.0};
}

}  // namespace

TEST_CASE("scale: driftless case gives delta = 1, s = x - alpha0") {
    auto spec = brownian01();
    for (double x : {0.1, 0.4, 0.9}) {
        auto sc = scale(spec, x);
        CHECK(sc.delta == doctest::Approx(1.0));
        CHECK(sc.s == doctest::Approx(x - 0.5).epsilon(1e-12));
        CHECK(sc.s_error < 1e-10);
    }
}

TEST_CASE("scale: b = -x gives delta = e^{x^2} and s as the erf-type integral") {
    auto spec = ou_line();
    spec.alpha0 = 0.0;
    auto sc = scale(spec, 1.2);
    CHECK(sc.delta == doctest::Approx(std::exp(1.2 * 1.2)).epsilon(1e-10));
    // oracle: series of int_0^x e^{u^2} du = sum x^{2k+1}/(k!(2k+1))
    double series = 0, term = 1.2;
    for (int k = 0; k < 60; ++k) {
        series += term / (2 * k + 1);
        term *= 1.2 * 1.2 / (k + 1);
    }
    CHECK(sc.s == doctest::Approx(series).epsilon(1e-10));
}

TEST_CASE("scale is strictly increasing") {
    auto spec = ou_line();
    double prev = scale(spec, -2.0).s;
    for (double x = -1.5; x <= 2.0; x += 0.5) {
        double cur = scale(spec, x).s;
        CHECK(cur > prev);
        prev = cur;
    }
}

TEST_CASE("scale/reachable invariance under affine reparametrization") {
    // moving alpha0 shifts and rescales s; reachability answers are unchanged
    auto spec = brownian01();
    auto r1 = reachable(spec, Side::Lower);
    spec.alpha0 = 0.25;
    auto r2 = reachable(spec, Side::Lower);
    CHECK(r1.verdict == r2.verdict);
    CHECK(r1.verdict == Reachability::Reachable);
}

TEST_CASE("reachable: Brownian motion on (0,1) reaches both ends") {
    auto spec = brownian01();
    CHECK(reachable(spec, Side::Lower).verdict == Reachability::Reachable);
    CHECK(reachable(spec, Side::Upper).verdict == Reachability::Reachable);
}

TEST_CASE("reachable: sigma = x on (0, inf) cannot reach 0") {
    Diffusion1dSpec spec{[](double) { return 0.0; }, [](double x) { return x; },
                         [](double) { return 0.0; }, 0.0,
                         std::numeric_limits<double>::infinity(), 1.0};
    auto rep = reachable(spec, Side::Lower);
    CHECK(rep.verdict == Reachability::Unreachable);
    CHECK(rep.scale_finite);  // s is finite at 0+, the second integral diverges
    CHECK_FALSE(rep.integral_finite);
}

TEST_CASE("reachable: Feller-type sqrt diffusion reaches 0") {
    Diffusion1dSpec spec{[](double x) { return -x; }, [](double x) { return std::sqrt(x); },
                         [](double) { return 0.0; }, 0.0,
                         std::numeric_limits<double>::infinity(), 1.0};
    CHECK(reachable(spec, Side::Lower).verdict == Reachability::Reachable);
}

TEST_CASE("lambda0_bound_1: Brownian values") {
    auto spec = brownian01();
    double b1 = lambda0_bound_1(spec, 1e-9, 1.0 - 1e-9);
    CHECK(b1 == doctest::Approx(M_PI * M_PI / 2).epsilon(1e-6));
    // constant killing shifts the bound by exactly that constant
    auto killed = spec;
    killed.kappa = [](double) { return 0.7; };
    CHECK(lambda0_bound_1(killed, 1e-9, 1.0 - 1e-9) == doctest::Approx(b1 + 0.7).epsilon(1e-9));
}

TEST_CASE("lambda0_bound_1 decreases on nested widening intervals") {
    Diffusion1dSpec spec{[](double) { return 0.0; }, [](double) { return 1.0; },
                         [](double) { return 0.0; }, 0.0, 4.0, 2.0};
    double narrow = lambda0_bound_1(spec, 1.5, 2.5);
    double wide = lambda0_bound_1(spec, 1.0, 3.0);
    CHECK(wide < narrow);
}

TEST_CASE("lambda0_bound_2: Brownian collapses to the first term") {
    auto spec = brownian01();
    CHECK(lambda0_bound_2(spec, 0.0, 1.0) == doctest::Approx(M_PI * M_PI / 2).epsilon(1e-9));
}

TEST_CASE("lambda0_bound_2: oscillating-potential example stays under the paper chain") {
    const double kappa0 = 13.0;  // > pi^2 + 3
    Diffusion1dSpec spec{[](double x) { return x * std::sin(x); }, [](double) { return 1.0; },
                         [kappa0](double x) { return kappa0 * (1.0 - 1.0 / (1.0 + x)); }, 0.0,
                         std::numeric_limits<double>::infinity(), 0.5};
    double b2 = lambda0_bound_2(spec, 0.0, 1.0);
    CHECK(b2 <= M_PI * M_PI / 2 + 1.5 + kappa0 / 2 + 1e-9);
    CHECK(b2 > 0);
}

TEST_CASE("both bounds dominate the finite-difference oracle") {
    auto spec = brownian01();
    auto fd = fd_eigen(spec, 0.0, 1.0, 256);
    CHECK(fd.lambda0 == doctest::Approx(M_PI * M_PI / 2).epsilon(1e-7));
    CHECK(lambda0_bound_1(spec, 1e-9, 1 - 1e-9) >= fd.lambda0 - 1e-6);
    CHECK(lambda0_bound_2(spec, 0, 1) >= fd.lambda0 - 1e-6);
    // equality case: bound_2 attains the oracle on the driftless unit interval
    CHECK(std::abs(lambda0_bound_2(spec, 0, 1) - fd.lambda0) <= 1e-6);
}

TEST_CASE("fd_eigen: Dirichlet Laplacian eigenpair on (0,1)") {
    auto spec = brownian01();
    auto fd = fd_eigen(spec, 0.0, 1.0, 200);
    CHECK(fd.lambda0 == doctest::Approx(M_PI * M_PI / 2).epsilon(1e-7));
    // density proportional to sin(pi x)
    Eigen::VectorXd expected(fd.xs.size());
    for (Eigen::Index i = 0; i < fd.xs.size(); ++i) expected(i) = std::sin(M_PI * fd.xs(i));
    expected /= expected.sum();
    CHECK((fd.density - expected).lpNorm<1>() < 1e-4);

    // kappa += c shifts lambda0 by exactly c
    auto shifted = spec;
    shifted.kappa = [](double) { return 2.5; };
    auto fd2 = fd_eigen(shifted, 0.0, 1.0, 200);
    CHECK(fd2.lambda0 == doctest::Approx(fd.lambda0 + 2.5).epsilon(1e-10));
}

TEST_CASE("fd_eigen agrees with the Euler-bridge kernel rate") {
    auto spec = brownian01();
    auto fd = fd_eigen(spec, 0.0, 1.0, 400);

    models::EulerDiffusionSpec es;
    es.drift = spec.drift;
    es.sigma = spec.sigma;
    es.kappa = spec.kappa;
    es.alpha = 0;
    es.beta = 1;
    es.grid_lo = 0;
    es.grid_hi = 1;
    es.dt = 1e-3;
    es.cells = 120;
    es.bridge = true;
    auto build = models::build_euler_absorbed(es);
    auto sol = solve_qsd(build.kernel, 1e-12);
    double lambda = -std::log(sol.theta0) / es.dt;
    CHECK(lambda == doctest::Approx(fd.lambda0).epsilon(0.02));
}

TEST_CASE("euler bridge improves the rate estimate at equal step size") {
    auto spec = brownian01();
    auto fd = fd_eigen(spec, 0.0, 1.0, 400);
    models::EulerDiffusionSpec es;
    es.drift = spec.drift;
    es.sigma = spec.sigma;
    es.kappa = spec.kappa;
    es.alpha = 0;
    es.beta = 1;
    es.grid_lo = 0;
    es.grid_hi = 1;
    es.dt = 2e-3;
    es.cells = 100;
    es.bridge = true;
    auto with_b = models::build_euler_absorbed(es);
    es.bridge = false;
    auto wout_b = models::build_euler_absorbed(es);
    double lam_with = -std::log(solve_qsd(with_b.kernel, 1e-12).theta0) / es.dt;
    double lam_wout = -std::log(solve_qsd(wout_b.kernel, 1e-12).theta0) / es.dt;
    CHECK(std::abs(lam_with - fd.lambda0) < std::abs(lam_wout - fd.lambda0));
}

TEST_CASE("phi_candidates: sqrt-scale drift identity by central differences") {
    auto spec = ou_line();
    auto cand = phi_candidates(spec, PhiKind::SqrtScale, -1.0, 0.0, 1.0);
    REQUIRE_FALSE(cand.report.empty());
    for (const auto& pt : cand.report) {
        if (std::abs(pt.x) > 2.5) continue;  // keep the FD step well-conditioned
        const double h = 1e-5;
        double p0 = cand.phi(pt.x), pp = cand.phi(pt.x + h), pm = cand.phi(pt.x - h);
        double lhs = 0.5 * (pp - 2 * p0 + pm) / (h * h) + spec.drift(pt.x) * (pp - pm) / (2 * h);
        CHECK(lhs == doctest::Approx(-pt.coefficient * p0).epsilon(1e-5));
    }
}

TEST_CASE("phi_candidates: Feller example has exploding sqrt-scale coefficient") {
    Diffusion1dSpec spec{[](double x) { return -x; }, [](double x) { return std::sqrt(x); },
                         [](double) { return 0.0; }, 0.0,
                         std::numeric_limits<double>::infinity(), 1.0};
    auto cand = phi_candidates(spec, PhiKind::SqrtScale, 0.5, 1.0, 2.0);
    // sigma^2 delta^2 / (8 s^2) grows without bound along the report grid
    double first = 0, last = 0;
    for (const auto& pt : cand.report)
        if (pt.x > 2.0) {
            if (first == 0) first = pt.coefficient;
            last = std::max(last, pt.coefficient);
        }
    CHECK(last > 10 * first);
}

TEST_CASE("phi_candidates: driftless exponential-potential candidate is constant") {
    auto spec = brownian01();
    spec.kappa = [](double x) { return 1.0 + x; };
    auto cand = phi_candidates(spec, PhiKind::ExpPotential, 0.2, 0.5, 0.8);
    CHECK(cand.phi(0.3) == doctest::Approx(1.0));
    CHECK(cand.phi(0.7) == doctest::Approx(1.0));
    for (const auto& pt : cand.report)
        CHECK(pt.coefficient == doctest::Approx(spec.kappa(pt.x)).epsilon(1e-9));
}

TEST_CASE("select_condition: Brownian on (0,1) picks (i)") {
    auto spec = brownian01();
    auto sel = select_condition(
        spec, [](double) { return 1.0; }, 0.2, 0.8, M_PI * M_PI / 2);
    CHECK(sel.label == ConditionLabel::I);
}

TEST_CASE("select_condition: Feller diffusion picks (ii) with the sqrt-scale candidate") {
    Diffusion1dSpec spec{[](double x) { return -x; }, [](double x) { return std::sqrt(x); },
                         [](double) { return 0.0; }, 0.0,
                         std::numeric_limits<double>::infinity(), 1.0};
    // oracle rate on a wide truncation of (0, inf)
    auto fd = fd_eigen(spec, 1e-4, 30.0, 600);
    auto cand = phi_candidates(spec, PhiKind::SqrtScale, 0.5, 1.0, 2.0);
    auto sel = select_condition(spec, cand.phi, 0.5, 3.0, fd.lambda0);
    CHECK(sel.label == ConditionLabel::II);
    CHECK(sel.lambda1 > fd.lambda0);
}

TEST_CASE("select_condition: bounded-noise killing example picks (iii) with phi = 1") {
    const double kappa0 = 2.0;
    Diffusion1dSpec spec{[](double) { return 0.0; }, [](double) { return 1.0; },
                         [kappa0](double x) { return kappa0 * (1.0 - 1.0 / (1.0 + std::abs(x))); },
                         -std::numeric_limits<double>::infinity(),
                         std::numeric_limits<double>::infinity(), 0.0};
    auto fd = fd_eigen(spec, -40.0, 40.0, 800);
    auto sel = select_condition(
        spec, [](double) { return 1.0; }, -9.0, 9.0, fd.lambda0);
    CHECK(sel.label == ConditionLabel::III);
    // kappa(x) >= kappa0 (1 - 1/10) beyond |x| = 9, which dominates lambda0
    CHECK(sel.lambda1 >= kappa0 * 0.9 - 1e-9);
}

TEST_CASE("select_condition: none when the drift rate cannot beat lambda0") {
    auto spec = ou_line();  // no killing, no reachable boundary, phi = 1
    auto sel = select_condition(
        spec, [](double) { return 1.0; }, -1.0, 1.0, 0.5);
    CHECK(sel.label == ConditionLabel::None);
}
