#include <doctest.h>

#include <Eigen/Dense>
#include <cmath>

#include "rainbow/common.hpp"
#include "rainbow/equivalents.hpp"
#include "rainbow/lab.hpp"
#include "rainbow/verify.hpp"

using namespace rainbow;

namespace {

constexpr double kGolden = 0.61803398874989484820;

CovarianceTriple diag_triple(Eigen::Index p, Eigen::Index k, double exponent) {
    CovarianceTriple t;
    t.omega = Eigen::MatrixXd::Zero(p, p);
    for (Eigen::Index i = 0; i < p; ++i)
        t.omega(i, i) = std::pow(static_cast<double>(i + 1), -exponent);
    t.psi = Eigen::MatrixXd::Identity(k, k);
    t.phi = Eigen::MatrixXd::Zero(p, k);
    return t;
}

Eigen::MatrixXd seeded_matrix(Eigen::Index rows, Eigen::Index cols, std::uint64_t seed) {
    StreamRng rng(seed);
    Eigen::MatrixXd m(rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i)
        for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = rng.next_normal();
    return m;
}

}  // namespace

TEST_CASE("spectral context sorts eigenvalues and caches the rotated target") {
    CovarianceTriple t;
    t.omega = Eigen::MatrixXd::Zero(2, 2);
    t.omega(0, 0) = 1.0;
    t.omega(1, 1) = 4.0;
    t.psi = Eigen::MatrixXd::Identity(2, 2);
    t.phi = Eigen::MatrixXd::Identity(2, 2);
    Eigen::VectorXd theta(2);
    theta << 1.0, 2.0;
    SpectralContext ctx = build_spectral_context(t, theta, 2, 0.0);
    CHECK(ctx.core->evals(0) == doctest::Approx(4.0));
    CHECK(ctx.core->evals(1) == doctest::Approx(1.0));
    CHECK(ctx.core->v.norm() == doctest::Approx(theta.norm()).epsilon(1e-12));
}

TEST_CASE("spectral context reconstructs a random PSD omega") {
    Eigen::MatrixXd raw = seeded_matrix(50, 50, 4);
    CovarianceTriple t;
    t.omega = raw * raw.transpose() / 50.0;
    t.psi = Eigen::MatrixXd::Identity(3, 3);
    t.phi = Eigen::MatrixXd::Zero(50, 3);
    SpectralContext ctx = build_spectral_context(t, Eigen::VectorXd::Zero(3), 25, 0.0);
    const Eigen::MatrixXd rebuilt =
        ctx.core->basis * ctx.core->evals.asDiagonal() * ctx.core->basis.transpose();
    CHECK((rebuilt - t.omega).norm() <= 1e-10 * t.omega.norm());
}

TEST_CASE("solve_m closed forms") {
    const Eigen::Index p = 300;
    CovarianceTriple t = diag_triple(p, 1, 0.0);  // Omega = I
    SpectralContext ctx = build_spectral_context(t, Eigen::VectorXd::Zero(1), p, 0.0);
    CHECK(std::abs(solve_m(ctx, 1.0).m - kGolden) <= 1e-10);

    t.omega.setZero();
    SpectralContext ctx0 = build_spectral_context(t, Eigen::VectorXd::Zero(1), p, 0.0);
    CHECK(solve_m(ctx0, 0.25).m == 4.0);
    CHECK_THROWS_AS(solve_m(ctx0, 0.0), numeric_error);
}

TEST_CASE("solve_m satisfies bounds, monotonicity and the residual budget") {
    const Eigen::Index p = 150;
    CovarianceTriple t = diag_triple(p, 1, 0.4);
    SpectralContext ctx = build_spectral_context(t, Eigen::VectorXd::Zero(1), 2 * p, 0.0);
    const double tro = ctx.core->trace_omega;
    double prev = 1e300;
    for (int i = 0; i < 20; ++i) {
        const double lambda = std::pow(10.0, -5.0 + 7.0 * i / 19.0);
        SelfConsistentSolution sol = solve_m(ctx, lambda);
        CHECK(sol.m <= 1.0 / lambda * (1 + 1e-12));
        CHECK(sol.m >= 1.0 / (lambda + tro) * (1 - 1e-12));
        CHECK(sol.residual <= 1e-12 * (lambda + tro));
        CHECK(sol.lambda_m > 0.0);
        CHECK(sol.lambda_m <= 1.0 + 1e-12);
        CHECK(sol.d_denom >= sol.lambda_m - 1e-10);
        CHECK(sol.m < prev);
        prev = sol.m;
    }
}

TEST_CASE("deterministic equivalent matrix satisfies the trace identity") {
    const Eigen::Index p = 80;
    CovarianceTriple t = diag_triple(p, 1, 0.6);
    SpectralContext ctx = build_spectral_context(t, Eigen::VectorXd::Zero(1), 120, 0.0);
    const double lambda = 0.05;
    SelfConsistentSolution sol = solve_m(ctx, lambda);
    // lambda <M> + (n/p) lambda m <Omega M> = 1, the trace of M M^{-1} / p.
    double tr_m = 0.0, tr_om = 0.0;
    for (Eigen::Index i = 0; i < p; ++i) {
        tr_m += sol.m_diag(i);
        tr_om += ctx.core->evals(i) * sol.m_diag(i);
    }
    tr_m /= static_cast<double>(p);
    tr_om /= static_cast<double>(p);
    CHECK(std::abs(lambda * tr_m + ctx.n_over_p() * lambda * sol.m * tr_om - 1.0) <= 1e-10);
}

TEST_CASE("theory collapses to the null predictor at huge regularization") {
    const Eigen::Index p = 60, k = 40;
    CovarianceTriple t = synthetic_triple(p, k, 31);
    Eigen::VectorXd theta = seeded_matrix(k, 1, 9).col(0);
    SpectralContext ctx = build_spectral_context(t, theta, p, 0.3);
    TheoryPrediction pred = theory_gen_error(ctx, 1e6);
    const double null_value = theta.dot(t.psi * theta) / static_cast<double>(k);
    CHECK(std::abs(pred.gen_error - null_value) <= 0.01 * null_value);
}

TEST_CASE("decoupled target reduces to the D-scaled norm") {
    const Eigen::Index p = 50, k = 30;
    CovarianceTriple t = diag_triple(p, k, 0.5);  // Phi = 0, Psi = I
    Eigen::VectorXd theta = seeded_matrix(k, 1, 2).col(0);
    SpectralContext ctx = build_spectral_context(t, theta, 70, 0.0);
    const double lambda = 0.2;
    TheoryPrediction pred = theory_gen_error(ctx, lambda);
    SelfConsistentSolution sol = solve_m(ctx, lambda);
    CHECK(pred.gen_error ==
          doctest::Approx(theta.squaredNorm() / static_cast<double>(k) / sol.d_denom)
              .epsilon(1e-12));
    CHECK(pred.noise_term == 0.0);
}

TEST_CASE("theory is invariant under a joint orthogonal rotation") {
    const Eigen::Index p = 60, k = 45;
    CovarianceTriple t = synthetic_triple(p, k, 17);
    Eigen::VectorXd theta = seeded_matrix(k, 1, 23).col(0);
    SpectralContext ctx = build_spectral_context(t, theta, 90, 0.4);
    const double base = theory_gen_error(ctx, 0.03).gen_error;

    Eigen::HouseholderQR<Eigen::MatrixXd> qr(seeded_matrix(p, p, 29));
    Eigen::MatrixXd q = qr.householderQ();
    CovarianceTriple rotated;
    rotated.omega = q * t.omega * q.transpose();
    rotated.psi = t.psi;
    rotated.phi = q * t.phi;
    SpectralContext rctx = build_spectral_context(rotated, theta, 90, 0.4);
    CHECK(theory_gen_error(rctx, 0.03).gen_error == doctest::Approx(base).epsilon(1e-9));
}

TEST_CASE("negative bias numerators warn instead of failing") {
    const Eigen::Index p = 40, k = 40;
    CovarianceTriple t;
    t.omega = Eigen::MatrixXd::Identity(p, p);
    t.psi = Eigen::MatrixXd::Zero(k, k);
    t.phi = Eigen::MatrixXd::Identity(p, k);
    Eigen::VectorXd theta = Eigen::VectorXd::Ones(k);
    SpectralContext ctx = build_spectral_context(t, theta, 80, 0.0);
    TheoryPrediction pred = theory_gen_error(ctx, 0.01);
    CHECK(pred.bias_term < 0.0);
    CHECK(pred.negative_bias_warning);
}

TEST_CASE("multi-resolvent equivalents: degenerate observables") {
    const Eigen::Index p = 50, k = 35, n = 60;
    CovarianceTriple t = synthetic_triple(p, k, 41);
    SpectralContext ctx = build_spectral_context(t, Eigen::VectorXd::Zero(k), n, 0.0);
    const double lambda = 0.3;
    CHECK(equiv_gxz(ctx, lambda, Eigen::MatrixXd::Zero(k, p)) == 0.0);
    CHECK(equiv_gagb(ctx, lambda, Eigen::MatrixXd::Zero(p, p), seeded_matrix(p, p, 3)) == 0.0);
    CHECK(equiv_xgomgx(ctx, lambda, Eigen::MatrixXd::Zero(n, n)) == 0.0);
    CHECK(equiv_zxgomgxz(ctx, lambda, Eigen::MatrixXd::Zero(k, k)) == 0.0);

    CovarianceTriple no_phi = t;
    no_phi.phi.setZero();
    SpectralContext ctx0 = build_spectral_context(no_phi, Eigen::VectorXd::Zero(k), n, 0.0);
    CHECK(std::abs(equiv_gxz(ctx0, lambda, seeded_matrix(k, p, 5))) <= 1e-14);
}

TEST_CASE("gagb with B = Omega collapses to the single-fraction form") {
    const Eigen::Index p = 70;
    CovarianceTriple t = synthetic_triple(p, 10, 47);
    SpectralContext ctx = build_spectral_context(t, Eigen::VectorXd::Zero(10), 90, 0.0);
    const double lambda = 0.15;
    Eigen::MatrixXd a = seeded_matrix(p, p, 51);
    SelfConsistentSolution sol = solve_m(ctx, lambda);
    const Eigen::MatrixXd at = ctx.core->basis.transpose() * a * ctx.core->basis;
    double amom = 0.0;
    for (Eigen::Index i = 0; i < p; ++i)
        amom += at(i, i) * ctx.core->evals(i) * sol.m_diag(i) * sol.m_diag(i);
    amom /= static_cast<double>(p);
    CHECK(equiv_gagb(ctx, lambda, a, t.omega) ==
          doctest::Approx(amom / sol.d_denom).epsilon(1e-10));
}

TEST_CASE("xgomgx with A = I matches the noise term relation") {
    const Eigen::Index p = 64, k = 16, n = 48;
    CovarianceTriple t = synthetic_triple(p, k, 53);
    Eigen::VectorXd theta = seeded_matrix(k, 1, 57).col(0);
    SpectralContext ctx = build_spectral_context(t, theta, n, 1.0);  // <Sigma> = 1
    const double lambda = 0.2;
    TheoryPrediction pred = theory_gen_error(ctx, lambda);
    const double scalar = equiv_xgomgx(ctx, lambda, Eigen::MatrixXd::Identity(n, n));
    CHECK(pred.noise_term == doctest::Approx(ctx.n_over_p() * scalar).epsilon(1e-12));
}

TEST_CASE("zxgomgxz with Phi = 0 and A = I removes the cross terms") {
    const Eigen::Index p = 60, k = 40, n = 50;
    CovarianceTriple t = diag_triple(p, k, 0.3);
    t.psi *= 1.7;
    SpectralContext ctx = build_spectral_context(t, Eigen::VectorXd::Zero(k), n, 0.0);
    const double lambda = 0.4;
    SelfConsistentSolution sol = solve_m(ctx, lambda);
    const double expected = sol.lambda_m * sol.lambda_m * ctx.n_over_k() * 1.7 *
                            sol.omega_m_omega_m / sol.d_denom;
    CHECK(equiv_zxgomgxz(ctx, lambda, Eigen::MatrixXd::Identity(k, k)) ==
          doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("resolvent equivalent on isotropic omega") {
    const Eigen::Index p = 30;
    CovarianceTriple t = diag_triple(p, 5, 0.0);
    SpectralContext ctx = build_spectral_context(t, Eigen::VectorXd::Zero(5), 60, 0.0);
    const double lambda = 0.5;
    SelfConsistentSolution sol = solve_m(ctx, lambda);
    const double expected = 1.0 / (lambda + ctx.n_over_p() * lambda * sol.m);
    CHECK(resolvent_equivalent(ctx, lambda, Eigen::MatrixXd::Identity(p, p)) ==
          doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("differentiation identity of the scalar approach holds") {
    // <M Omega> + lambda d<M Omega>/dlambda == (n/p)(lambda m)^2 <Omega M Omega M> / D.
    const Eigen::Index p = 100;
    CovarianceTriple t = diag_triple(p, 1, 0.4);
    SpectralContext ctx = build_spectral_context(t, Eigen::VectorXd::Zero(1), 150, 0.0);
    const double lambda = 0.5;
    auto m_omega = [&](double l) {
        SelfConsistentSolution sol = solve_m(ctx, l);
        double acc = 0.0;
        for (Eigen::Index i = 0; i < p; ++i) acc += ctx.core->evals(i) * sol.m_diag(i);
        return acc / static_cast<double>(p);
    };
    const double h = 1e-5 * lambda;
    const double deriv = (m_omega(lambda + h) - m_omega(lambda - h)) / (2.0 * h);
    SelfConsistentSolution sol = solve_m(ctx, lambda);
    const double rhs =
        ctx.n_over_p() * sol.lambda_m * sol.lambda_m * sol.omega_m_omega_m / sol.d_denom;
    CHECK(m_omega(lambda) + lambda * deriv == doctest::Approx(rhs).epsilon(1e-6));
}

TEST_CASE("dimension mismatches are rejected") {
    const Eigen::Index p = 20, k = 10, n = 15;
    CovarianceTriple t = synthetic_triple(p, k, 3);
    SpectralContext ctx = build_spectral_context(t, Eigen::VectorXd::Zero(k), n, 0.0);
    CHECK_THROWS_AS(equiv_gxz(ctx, 0.1, Eigen::MatrixXd::Zero(p, k)), numeric_error);
    CHECK_THROWS_AS(equiv_xgomgx(ctx, 0.1, Eigen::MatrixXd::Zero(p, p)), numeric_error);
    CHECK_THROWS_AS(
        build_spectral_context(t, Eigen::VectorXd::Zero(k + 1), n, 0.0), numeric_error);
}
