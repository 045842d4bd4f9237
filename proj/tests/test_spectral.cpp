#include <doctest.h>

#include <cmath>
#include <random>

#include "qsdlab/errors.hpp"
#include "qsdlab/spectral.hpp"
#include "test_util.hpp"

using namespace qsdlab;
using testutil::reference_2x2;

TEST_CASE("solve_qsd on the 2x2 reference kernel") {
    auto k = reference_2x2();
    auto sol = solve_qsd(k);
    CHECK(sol.theta0 == doctest::Approx(0.7).epsilon(1e-12));
    CHECK(sol.nu.weight(0) == doctest::Approx(0.6).epsilon(1e-11));
    CHECK(sol.nu.weight(1) == doctest::Approx(0.4).epsilon(1e-11));
    CHECK(sol.eta(0) == doctest::Approx(1.0).epsilon(1e-11));
    CHECK(sol.eta(1) == doctest::Approx(1.0).epsilon(1e-11));
    CHECK(sol.e_prime.size() == 2);
    CHECK(sol.left_residual < 1e-10);
    CHECK(sol.right_residual < 1e-10);
}

TEST_CASE("solve_qsd: absorption-free kernel gives theta0 = 1 and eta = 1") {
    auto sp = StateSpace::with_size(3);
    Eigen::MatrixXd m(3, 3);
    m << 0.2, 0.5, 0.3, 0.4, 0.4, 0.2, 0.1, 0.3, 0.6;
    auto k = SubKernel::from_dense(sp, m);
    auto sol = solve_qsd(k);
    CHECK(sol.theta0 == doctest::Approx(1.0).epsilon(1e-12));
    CHECK((sol.eta - Eigen::VectorXd::Ones(3)).lpNorm<Eigen::Infinity>() < 1e-10);
    auto oracle = testutil::dense_eigen_oracle(k);
    CHECK((sol.nu.weights() - oracle.nu).lpNorm<1>() < 1e-10);
}

TEST_CASE("solve_qsd agrees with the dense QR oracle on random primitive kernels") {
    std::mt19937_64 rng(42);
    for (int rep = 0; rep < 200; ++rep) {
        auto k = testutil::random_primitive_kernel(rng, 2 + rep % 5);
        auto sol = solve_qsd(k, 1e-13);
        auto oracle = testutil::dense_eigen_oracle(k);
        CHECK(std::abs(sol.theta0 - oracle.theta0) < 1e-8);
        CHECK((sol.nu.weights() - oracle.nu).lpNorm<Eigen::Infinity>() < 1e-8);
        CHECK((sol.eta - oracle.eta).lpNorm<Eigen::Infinity>() < 1e-8);
    }
}

TEST_CASE("solve_qsd: periodic dominant class is rejected with its period") {
    auto sp = StateSpace::with_size(2);
    Eigen::MatrixXd m(2, 2);
    m << 0.0, 0.9, 0.9, 0.0;
    auto k = SubKernel::from_dense(sp, m);
    try {
        solve_qsd(k);
        FAIL("expected periodicity error");
    } catch (const PeriodicityError& e) {
        CHECK(e.period == 2);
    }
}

TEST_CASE("solve_qsd: tied class roots demand explicit selection") {
    auto sp = StateSpace::with_size(2);
    Eigen::MatrixXd m = Eigen::MatrixXd::Zero(2, 2);
    m(0, 0) = 0.5;
    m(1, 1) = 0.5;
    auto k = SubKernel::from_dense(sp, m);
    CHECK_THROWS_AS(solve_qsd(k), DominantClassTie);
    auto sol = solve_qsd(k, 1e-12, 100000, std::size_t{1});
    CHECK(sol.theta0 == doctest::Approx(0.5));
    CHECK(sol.nu.weight(1) == doctest::Approx(1.0));
}

TEST_CASE("solve_qsd: nilpotent kernel has no quasi-stationary regime") {
    auto sp = StateSpace::with_size(2);
    Eigen::MatrixXd m = Eigen::MatrixXd::Zero(2, 2);
    m(0, 1) = 1.0;
    CHECK_THROWS_AS(solve_qsd(SubKernel::from_dense(sp, m)), Precondition);
}

TEST_CASE("eta is the limit of theta0^-n survival, geometrically fast") {
    // reference kernel: both row sums equal, so the limit is exact from n = 1
    auto k = reference_2x2();
    auto sol = solve_qsd(k);
    Eigen::VectorXd u = survival_all(k, 12);
    CHECK((u / std::pow(sol.theta0, 12) - sol.eta).lpNorm<Eigen::Infinity>() < 1e-12);

    // generic kernels: fitted decay rate matches |lambda2|/theta0 within 10%
    std::mt19937_64 rng(46);
    int measured = 0;
    while (measured < 10) {
        auto kr = testutil::random_primitive_kernel(rng, 3);
        auto oracle = testutil::dense_eigen_oracle(kr);
        double expected = oracle.lambda2_modulus / oracle.theta0;
        if (expected < 0.05 || expected > 0.9) continue;  // keep well-conditioned fits
        auto s = solve_qsd(kr, 1e-13);
        Eigen::VectorXd w = Eigen::VectorXd::Ones(3);
        std::vector<double> errs;
        double scale = 1.0;
        for (int n = 1; n <= 60; ++n) {
            w = kr.apply_right(w);
            scale *= s.theta0;
            errs.push_back((w / scale - s.eta).lpNorm<Eigen::Infinity>());
        }
        // geometric-mean rate over a window above the noise floor
        int lo = 2, hi = lo;
        while (hi + 1 < static_cast<int>(errs.size()) && errs[static_cast<std::size_t>(hi + 1)] > 1e-11)
            ++hi;
        if (hi - lo < 6) continue;
        double rate = std::pow(errs[static_cast<std::size_t>(hi)] / errs[static_cast<std::size_t>(lo)],
                               1.0 / static_cast<double>(hi - lo));
        CHECK(rate == doctest::Approx(expected).epsilon(0.10));
        ++measured;
    }
}

TEST_CASE("q_process on the reference kernel is P / theta0") {
    auto k = reference_2x2();
    auto sol = solve_qsd(k);
    auto qp = q_process(k, sol);
    CHECK(qp.tilde_kernel.entry(0, 0) == doctest::Approx(5.0 / 7.0).epsilon(1e-11));
    CHECK(qp.tilde_kernel.entry(0, 1) == doctest::Approx(2.0 / 7.0).epsilon(1e-11));
    CHECK(qp.tilde_kernel.entry(1, 0) == doctest::Approx(3.0 / 7.0).epsilon(1e-11));
    CHECK(qp.tilde_kernel.entry(1, 1) == doctest::Approx(4.0 / 7.0).epsilon(1e-11));
    CHECK(qp.beta.weight(0) == doctest::Approx(0.6).epsilon(1e-10));
    CHECK(qp.beta.weight(1) == doctest::Approx(0.4).epsilon(1e-10));
    // beta is invariant for the tilde kernel
    auto moved = qp.tilde_kernel.apply_left(qp.beta.weights());
    CHECK((moved - qp.beta.weights()).lpNorm<1>() < 1e-10);
}

TEST_CASE("q_process rows sum to 1 on random kernels") {
    std::mt19937_64 rng(43);
    for (int rep = 0; rep < 50; ++rep) {
        auto k = testutil::random_primitive_kernel(rng, 2 + rep % 6);
        auto sol = solve_qsd(k, 1e-13);
        auto qp = q_process(k, sol);
        for (std::size_t i = 0; i < qp.tilde_kernel.size(); ++i)
            CHECK(qp.tilde_kernel.row_sum(i) == doctest::Approx(1.0).epsilon(1e-10));
    }
}

TEST_CASE("q_process of an absorption-free kernel is the kernel itself") {
    auto sp = StateSpace::with_size(2);
    Eigen::MatrixXd m(2, 2);
    m << 0.3, 0.7, 0.6, 0.4;
    auto k = SubKernel::from_dense(sp, m);
    auto sol = solve_qsd(k);
    auto qp = q_process(k, sol);
    for (std::size_t i = 0; i < 2; ++i)
        for (std::size_t j = 0; j < 2; ++j)
            CHECK(qp.tilde_kernel.entry(i, j) == doctest::Approx(k.entry(i, j)).epsilon(1e-10));
}

TEST_CASE("fit_convergence: starting at nu is reported exact") {
    auto k = reference_2x2();
    auto sol = solve_qsd(k);
    auto fit = fit_convergence(k, sol.nu, sol, 40);
    CHECK(fit.exact);
    for (double tv : fit.tv_series) CHECK(tv < 1e-10);
}

TEST_CASE("fit_convergence: Dirac start decays at |lambda2|/theta0") {
    auto k = reference_2x2();
    auto sol = solve_qsd(k);
    auto fit = fit_convergence(k, Dist::dirac(k.space(), 0), sol, 50);
    CHECK_FALSE(fit.exact);
    CHECK(fit.alpha_hat == doctest::Approx(2.0 / 7.0).epsilon(5e-3));
    CHECK(fit.alpha_hat < 1.0);
    CHECK(fit.r_squared > 0.999);
    // nonincreasing after burn-in
    for (std::size_t n = static_cast<std::size_t>(fit.burn_in); n + 1 < fit.tv_series.size(); ++n)
        CHECK(fit.tv_series[n + 1] <= fit.tv_series[n] + 1e-9);
}

TEST_CASE("fit_convergence rejects a start concentrated off the survivor set") {
    auto sp = StateSpace::with_size(2);
    Eigen::MatrixXd m = Eigen::MatrixXd::Zero(2, 2);
    m(0, 0) = 0.5;
    m(1, 1) = 0.2;  // state 1 cannot reach the dominant class {0}
    auto k = SubKernel::from_dense(sp, m);
    auto sol = solve_qsd(k);
    CHECK_THROWS_AS(fit_convergence(k, Dist::dirac(sp, 1), sol, 10), Precondition);
}

TEST_CASE("fit_convergence: alpha_hat < 1 from every survivor Dirac start") {
    std::mt19937_64 rng(44);
    for (int rep = 0; rep < 20; ++rep) {
        auto k = testutil::random_primitive_kernel(rng, 3 + rep % 4);
        auto sol = solve_qsd(k, 1e-13);
        for (std::size_t x : sol.e_prime.indices()) {
            auto fit = fit_convergence(k, Dist::dirac(k.space(), x), sol, 60);
            if (!fit.exact) CHECK(fit.alpha_hat < 1.0);
        }
    }
}

TEST_CASE("estimate_R: reference kernel gives 1/0.7") {
    auto k = reference_2x2();
    for (std::size_t x = 0; x < 2; ++x)
        for (std::size_t y = 0; y < 2; ++y)
            CHECK(estimate_R(k, x, y, 200) == doctest::Approx(1.0 / 0.7).epsilon(1e-9));
}

TEST_CASE("estimate_R: identity kernel gives exactly 1") {
    auto k = SubKernel::from_dense(StateSpace::with_size(2), Eigen::MatrixXd::Identity(2, 2));
    CHECK(estimate_R(k, 0, 0, 10) == doctest::Approx(1.0));
}

TEST_CASE("estimate_R: unreachable target is an error") {
    auto sp = StateSpace::with_size(2);
    Eigen::MatrixXd m = Eigen::MatrixXd::Zero(2, 2);
    m(0, 0) = 0.5;
    m(1, 0) = 0.5;
    auto k = SubKernel::from_dense(sp, m);
    CHECK_THROWS_AS(estimate_R(k, 0, 1, 50), Precondition);
}

TEST_CASE("estimate_R is invariant under the choice of states in one class") {
    std::mt19937_64 rng(45);
    auto k = testutil::random_primitive_kernel(rng, 5);
    double ref = estimate_R(k, 0, 0, 400);
    for (std::size_t x = 0; x < 5; ++x)
        for (std::size_t y = 0; y < 5; ++y)
            CHECK(std::abs(estimate_R(k, x, y, 400) - ref) < 1e-3);
}

TEST_CASE("classify_eigenpair: eta itself is case 2 with scalar 1") {
    auto k = reference_2x2();
    auto sol = solve_qsd(k);
    auto rep = classify_eigenpair(k, sol.eta.cast<std::complex<double>>(), 0.0, sol.theta0, sol);
    CHECK(rep.label == EigenfunctionCase::EtaMultiple);
    CHECK(std::abs(rep.nu_h - std::complex<double>(1.0, 0)) < 1e-9);
    CHECK(rep.theta_matches_theta0);
    CHECK(rep.h_matches_eta);
}

TEST_CASE("classify_eigenpair: all-ones with cemetery value 1 is case 1") {
    auto k = reference_2x2();  // absorbing: theta0 = 0.7 < 1
    auto sol = solve_qsd(k);
    Eigen::VectorXcd ones = Eigen::VectorXcd::Ones(2);
    auto rep = classify_eigenpair(k, ones, 1.0, 1.0, sol);
    CHECK(rep.label == EigenfunctionCase::Constant);
}

TEST_CASE("classify_eigenpair: second eigenvector has nu(h) = 0, case 3") {
    auto k = reference_2x2();
    auto sol = solve_qsd(k);
    Eigen::VectorXcd h(2);
    h << 2.0, -3.0;  // right eigenvector for lambda2 = 0.2
    auto rep = classify_eigenpair(k, h, 0.0, 0.2, sol);
    CHECK(rep.label == EigenfunctionCase::Subdominant);
    CHECK(rep.modulus_ratio == doctest::Approx(2.0 / 7.0).epsilon(1e-9));
}

TEST_CASE("classify_eigenpair: eigenfunction vanishing on E' is case 4") {
    auto sp = StateSpace::with_size(2);
    Eigen::MatrixXd m = Eigen::MatrixXd::Zero(2, 2);
    m(0, 0) = 0.5;
    m(1, 1) = 0.4;  // disconnected; dominant class {0}, E' = {0}
    auto k = SubKernel::from_dense(sp, m);
    auto sol = solve_qsd(k);
    Eigen::VectorXcd h(2);
    h << 0.0, 1.0;
    auto rep = classify_eigenpair(k, h, 0.0, 0.4, sol);
    CHECK(rep.label == EigenfunctionCase::OffSurvivor);
}

TEST_CASE("classify_eigenpair: growth bound constant reported when phi1 given") {
    auto k = reference_2x2();
    auto sol = solve_qsd(k);
    Eigen::VectorXd phi1(2);
    phi1 << 1.0, 6.0;
    auto rep = classify_eigenpair(k, sol.eta.cast<std::complex<double>>(), 0.0, sol.theta0, sol,
                                  1e-8, &phi1, 0.5);
    CHECK(rep.growth_checked);
    CHECK(rep.growth_constant > 0);
    CHECK(rep.growth_constant <= 1.0 + 1e-9);  // eta <= phi1^p here
}

TEST_CASE("classify_eigenpair rejects non-eigenpairs with the residual") {
    auto k = reference_2x2();
    auto sol = solve_qsd(k);
    Eigen::VectorXcd h(2);
    h << 1.0, 5.0;
    CHECK_THROWS_AS(classify_eigenpair(k, h, 0.0, 0.3, sol), Precondition);
}

TEST_CASE("solution_to_json carries the full triple") {
    auto k = reference_2x2();
    auto sol = solve_qsd(k);
    auto doc = solution_to_json(sol);
    CHECK(doc.find("\"theta0\"") != std::string::npos);
    CHECK(doc.find("0.7") != std::string::npos);
    CHECK(doc.find("\"e_prime\"") != std::string::npos);
}
