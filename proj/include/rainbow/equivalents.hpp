#pragma once

#include <Eigen/Core>
#include <memory>

#include "rainbow/linearization.hpp"

namespace rainbow {

// Immutable spectral data shared across a lambda/alpha sweep: the
// eigendecomposition of Omega (computed once) plus the rotated cross
// covariance and target. Copies are cheap; the heavy part is shared.
struct SpectralContext {
    struct Core {
        Eigen::VectorXd evals;      // eigenvalues of Omega, non-increasing
        Eigen::MatrixXd basis;      // U with Omega = U diag(evals) U^T
        Eigen::MatrixXd phi_rot;    // U^T Phi, p x k
        Eigen::VectorXd v;          // phi_rot * theta_star, p
        Eigen::MatrixXd psi;        // k x k
        Eigen::VectorXd theta_star; // k
        double theta_psi_theta = 0.0;
        double trace_omega = 0.0;   // <Omega>
        Eigen::Index rank = 0;
        Eigen::Index p = 0;
        Eigen::Index k = 0;
    };
    std::shared_ptr<const Core> core;
    Eigen::Index n = 0;  // sample count of the current grid point
    double noise_trace = 0.0;

    double n_over_p() const { return static_cast<double>(n) / static_cast<double>(core->p); }
    double n_over_k() const { return static_cast<double>(n) / static_cast<double>(core->k); }
};

SpectralContext build_spectral_context(const CovarianceTriple& triple,
                                       const Eigen::VectorXd& theta_star, Eigen::Index n_samples,
                                       double noise_trace);

// Same core, different sample count.
SpectralContext with_samples(const SpectralContext& ctx, Eigen::Index n);

// Solution of 1/m = lambda + <Omega (I + (n/p) m Omega)^{-1}>, found by
// bisection bracketed by max{1/(lambda+<Omega>), (1-rank/n)/lambda} and
// 1/lambda between which the defining function is strictly increasing.
struct SelfConsistentSolution {
    double m = 0.0;
    double lambda = 0.0;
    double residual = 0.0;        // |1/m - lambda - <Omega (...)^{-1}>|
    Eigen::VectorXd m_diag;       // M_ii = 1/(lambda + (n/p) lambda m w_i)
    double lambda_m = 0.0;        // lambda * m
    double omega_m_omega_m = 0.0; // <Omega M Omega M>
    double d_denom = 0.0;         // 1 - (n/p)(lambda m)^2 <Omega M Omega M>
};

SelfConsistentSolution solve_m(const SpectralContext& ctx, double lambda);

struct TheoryPrediction {
    double gen_error = 0.0;
    double bias_term = 0.0;   // theta*-quadratic part
    double noise_term = 0.0;  // <Sigma> part
    bool negative_bias_warning = false;
    SelfConsistentSolution solution;
};

// Asymptotic test error:
//   (1/k) theta^T [Psi - (n/p) m lambda Phi (M + lambda M^2) Phi^T] theta / D
//   + <Sigma> (lambda m)^2 (n/p) <M Omega M Omega> / D,
// evaluated in the Omega eigenbasis at O(p k) per grid point.
TheoryPrediction theory_gen_error(const SpectralContext& ctx, double lambda);

// Deterministic equivalents of the multi-resolvent functionals; each is the
// asymptotic value of the matching Monte Carlo quantity in empirical_lab.
double equiv_gxz(const SpectralContext& ctx, double lambda, const Eigen::MatrixXd& a);      // a: k x p
double equiv_gagb(const SpectralContext& ctx, double lambda, const Eigen::MatrixXd& a,
                  const Eigen::MatrixXd& b);                                                // p x p
double equiv_xgomgx(const SpectralContext& ctx, double lambda, const Eigen::MatrixXd& a);   // a: n x n
double equiv_zxgomgxz(const SpectralContext& ctx, double lambda, const Eigen::MatrixXd& a); // a: k x k

// <M A> for p x p observables A; the deterministic equivalent of <G A>.
double resolvent_equivalent(const SpectralContext& ctx, double lambda, const Eigen::MatrixXd& a);

// Materialized M(lambda); O(p^2) storage, for oracle tests.
Eigen::MatrixXd deterministic_equivalent_matrix(const SpectralContext& ctx,
                                                const SelfConsistentSolution& sol);

}  // namespace rainbow
