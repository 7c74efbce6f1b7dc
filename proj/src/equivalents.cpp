#include "rainbow/equivalents.hpp"

#include <Eigen/Eigenvalues>
#include <algorithm>
#include <cmath>

#include "rainbow/common.hpp"

namespace rainbow {

namespace {

void check_samples(const SpectralContext& ctx) {
    if (ctx.n <= 0) throw numeric_error("spectral context has no sample count set");
}

// g(m) = lambda m + m <Omega (I + c m Omega)^{-1}> - 1, strictly increasing.
double solver_g(double m, double lambda, double c, const Eigen::VectorXd& evals) {
    double trace = 0.0;
    for (Eigen::Index i = 0; i < evals.size(); ++i)
        trace += evals(i) / (1.0 + c * m * evals(i));
    trace /= static_cast<double>(evals.size());
    return lambda * m + m * trace - 1.0;
}

}  // namespace

SpectralContext build_spectral_context(const CovarianceTriple& triple,
                                       const Eigen::VectorXd& theta_star, Eigen::Index n_samples,
                                       double noise_trace) {
    const Eigen::Index p = triple.omega.rows();
    const Eigen::Index k = triple.psi.rows();
    if (triple.omega.cols() != p) throw numeric_error("build_spectral_context: omega not square");
    if (triple.psi.cols() != k) throw numeric_error("build_spectral_context: psi not square");
    if (triple.phi.rows() != p || triple.phi.cols() != k)
        throw numeric_error("build_spectral_context: phi dimension mismatch");
    if (theta_star.size() != k)
        throw numeric_error("build_spectral_context: theta_star dimension mismatch");
    if ((triple.omega - triple.omega.transpose()).norm() >
        1e-8 * std::max(1.0, triple.omega.norm()))
        throw numeric_error("build_spectral_context: omega is not symmetric");

    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(triple.omega);
    if (es.info() != Eigen::Success)
        throw numeric_error("build_spectral_context: eigendecomposition failed");

    auto core = std::make_shared<SpectralContext::Core>();
    core->p = p;
    core->k = k;
    // Eigen returns ascending order; store non-increasing.
    core->evals = es.eigenvalues().reverse();
    core->basis = es.eigenvectors().rowwise().reverse();
    const double top = std::max(core->evals.size() > 0 ? core->evals(0) : 0.0, 0.0);
    for (Eigen::Index i = 0; i < p; ++i) {
        if (core->evals(i) < -1e-10 * std::max(top, 1.0))
            throw numeric_error("build_spectral_context: omega has a negative eigenvalue " +
                                std::to_string(core->evals(i)));
        if (core->evals(i) < 0.0) core->evals(i) = 0.0;
    }
    const double rank_tol = static_cast<double>(p) * 1e-14 * std::max(top, 1e-300);
    core->rank = (core->evals.array() > rank_tol).count();
    core->phi_rot = core->basis.transpose() * triple.phi;
    core->theta_star = theta_star;
    core->v = core->phi_rot * theta_star;
    core->psi = triple.psi;
    core->theta_psi_theta = theta_star.dot(triple.psi * theta_star);
    core->trace_omega = core->evals.sum() / static_cast<double>(p);

    SpectralContext ctx;
    ctx.core = std::move(core);
    ctx.n = n_samples;
    ctx.noise_trace = noise_trace;
    return ctx;
}

SpectralContext with_samples(const SpectralContext& ctx, Eigen::Index n) {
    SpectralContext out = ctx;
    out.n = n;
    return out;
}

SelfConsistentSolution solve_m(const SpectralContext& ctx, double lambda) {
    if (lambda <= 0.0) throw numeric_error("solve_m: lambda must be > 0");
    check_samples(ctx);
    const auto& core = *ctx.core;
    const double c = ctx.n_over_p();

    SelfConsistentSolution sol;
    sol.lambda = lambda;

    if (core.rank == 0) {
        // Omega = 0: both solver bounds coincide and m = 1/lambda exactly.
        sol.m = 1.0 / lambda;
        sol.residual = 0.0;
    } else {
        double lo = 1.0 / (lambda + core.trace_omega);
        const double rank_bound =
            (1.0 - static_cast<double>(core.rank) / static_cast<double>(ctx.n)) / lambda;
        lo = std::max(lo, rank_bound);
        double hi = 1.0 / lambda;
        // Guard the bracket against rounding at the endpoints.
        if (solver_g(lo, lambda, c, core.evals) > 0.0) lo *= 1.0 - 1e-12;
        if (solver_g(hi, lambda, c, core.evals) < 0.0) hi *= 1.0 + 1e-12;
        if (solver_g(lo, lambda, c, core.evals) > 0.0 || solver_g(hi, lambda, c, core.evals) < 0.0)
            throw numeric_error("solve_m: bracket failure (check Omega and lambda)");
        for (int it = 0; it < 200 && (hi - lo) > 1e-16 * hi; ++it) {
            const double mid = 0.5 * (lo + hi);
            if (solver_g(mid, lambda, c, core.evals) < 0.0)
                lo = mid;
            else
                hi = mid;
        }
        sol.m = 0.5 * (lo + hi);
        double trace = 0.0;
        for (Eigen::Index i = 0; i < core.evals.size(); ++i)
            trace += core.evals(i) / (1.0 + c * sol.m * core.evals(i));
        trace /= static_cast<double>(core.p);
        sol.residual = std::abs(1.0 / sol.m - lambda - trace);
        const double res_tol = 1e-12 * (lambda + core.trace_omega);
        if (sol.residual > res_tol)
            throw numeric_error("solve_m: residual " + std::to_string(sol.residual) +
                                " above tolerance");
    }

    sol.lambda_m = lambda * sol.m;
    sol.m_diag.resize(core.p);
    double omm = 0.0;
    for (Eigen::Index i = 0; i < core.p; ++i) {
        const double mii = 1.0 / (lambda + c * lambda * sol.m * core.evals(i));
        sol.m_diag(i) = mii;
        omm += core.evals(i) * core.evals(i) * mii * mii;
    }
    sol.omega_m_omega_m = omm / static_cast<double>(core.p);
    sol.d_denom = 1.0 - c * sol.lambda_m * sol.lambda_m * sol.omega_m_omega_m;
    if (sol.d_denom < sol.lambda_m - 1e-10)
        throw numeric_error("solve_m: denominator D below its lambda*m floor (internal error)");
    return sol;
}

TheoryPrediction theory_gen_error(const SpectralContext& ctx, double lambda) {
    check_samples(ctx);
    TheoryPrediction pred;
    pred.solution = solve_m(ctx, lambda);
    const auto& core = *ctx.core;
    const auto& sol = pred.solution;
    const double c = ctx.n_over_p();

    // theta^T Phi (M + lambda M^2) Phi^T theta = sum_i (M_ii + lambda M_ii^2) v_i^2.
    double quad = 0.0;
    for (Eigen::Index i = 0; i < core.p; ++i) {
        const double mii = sol.m_diag(i);
        quad += (mii + lambda * mii * mii) * core.v(i) * core.v(i);
    }
    const double numerator = core.theta_psi_theta - c * sol.m * lambda * quad;
    pred.bias_term = numerator / (static_cast<double>(core.k) * sol.d_denom);
    if (pred.bias_term < -1e-8) pred.negative_bias_warning = true;

    pred.noise_term =
        ctx.noise_trace * sol.lambda_m * sol.lambda_m * c * sol.omega_m_omega_m / sol.d_denom;
    pred.gen_error = pred.bias_term + pred.noise_term;
    return pred;
}

double equiv_gxz(const SpectralContext& ctx, double lambda, const Eigen::MatrixXd& a) {
    check_samples(ctx);
    const auto& core = *ctx.core;
    if (a.rows() != core.k || a.cols() != core.p)
        throw numeric_error("equiv_gxz: observable must be k x p");
    SelfConsistentSolution sol = solve_m(ctx, lambda);
    // <M Phi A> = (1/p) sum_i M_ii (phi_rot (A U))_ii
    const Eigen::MatrixXd au = a * core.basis;  // k x p
    double acc = 0.0;
    for (Eigen::Index i = 0; i < core.p; ++i)
        acc += sol.m_diag(i) * core.phi_rot.row(i).dot(au.col(i));
    acc /= static_cast<double>(core.p);
    return sol.lambda_m * static_cast<double>(ctx.n) /
           std::sqrt(static_cast<double>(core.k) * static_cast<double>(core.p)) * acc;
}

double equiv_gagb(const SpectralContext& ctx, double lambda, const Eigen::MatrixXd& a,
                  const Eigen::MatrixXd& b) {
    check_samples(ctx);
    const auto& core = *ctx.core;
    if (a.rows() != core.p || a.cols() != core.p || b.rows() != core.p || b.cols() != core.p)
        throw numeric_error("equiv_gagb: observables must be p x p");
    SelfConsistentSolution sol = solve_m(ctx, lambda);
    const Eigen::MatrixXd at = core.basis.transpose() * a * core.basis;
    const Eigen::MatrixXd bt = core.basis.transpose() * b * core.basis;
    const double p = static_cast<double>(core.p);

    const Eigen::MatrixXd am = at * sol.m_diag.asDiagonal();
    const Eigen::MatrixXd bm = bt * sol.m_diag.asDiagonal();
    const double ambm = am.cwiseProduct(bm.transpose()).sum() / p;
    double amom = 0.0, ombm = 0.0;
    for (Eigen::Index i = 0; i < core.p; ++i) {
        const double w = core.evals(i) * sol.m_diag(i) * sol.m_diag(i);
        amom += at(i, i) * w;
        ombm += bt(i, i) * w;
    }
    amom /= p;
    ombm /= p;
    return ambm + ctx.n_over_p() * sol.lambda_m * sol.lambda_m * amom * ombm / sol.d_denom;
}

double equiv_xgomgx(const SpectralContext& ctx, double lambda, const Eigen::MatrixXd& a) {
    check_samples(ctx);
    if (a.rows() != ctx.n || a.cols() != ctx.n)
        throw numeric_error("equiv_xgomgx: observable must be n x n");
    SelfConsistentSolution sol = solve_m(ctx, lambda);
    const double scalar = sol.lambda_m * sol.lambda_m * sol.omega_m_omega_m / sol.d_denom;
    return scalar * a.trace() / static_cast<double>(ctx.n);
}

double equiv_zxgomgxz(const SpectralContext& ctx, double lambda, const Eigen::MatrixXd& a) {
    check_samples(ctx);
    const auto& core = *ctx.core;
    if (a.rows() != core.k || a.cols() != core.k)
        throw numeric_error("equiv_zxgomgxz: observable must be k x k");
    SelfConsistentSolution sol = solve_m(ctx, lambda);
    const double c = ctx.n_over_p();
    const double k = static_cast<double>(core.k);

    // Phi^T M Phi and Phi^T M Omega M Phi in the eigenbasis.
    Eigen::VectorXd momm(core.p);
    for (Eigen::Index i = 0; i < core.p; ++i)
        momm(i) = core.evals(i) * sol.m_diag(i) * sol.m_diag(i);
    const Eigen::MatrixXd pmp =
        core.phi_rot.transpose() * sol.m_diag.asDiagonal() * core.phi_rot;
    const Eigen::MatrixXd pmomp = core.phi_rot.transpose() * momm.asDiagonal() * core.phi_rot;

    const Eigen::MatrixXd middle =
        (core.psi - 2.0 * c * lambda * sol.m * pmp) * sol.omega_m_omega_m + c * pmomp;
    const double tr = a.cwiseProduct(middle.transpose()).sum() / k;
    return sol.lambda_m * sol.lambda_m * ctx.n_over_k() * tr / sol.d_denom;
}

double resolvent_equivalent(const SpectralContext& ctx, double lambda, const Eigen::MatrixXd& a) {
    check_samples(ctx);
    const auto& core = *ctx.core;
    if (a.rows() != core.p || a.cols() != core.p)
        throw numeric_error("resolvent_equivalent: observable must be p x p");
    SelfConsistentSolution sol = solve_m(ctx, lambda);
    const Eigen::MatrixXd aw = a * core.basis;
    double acc = 0.0;
    for (Eigen::Index i = 0; i < core.p; ++i)
        acc += sol.m_diag(i) * core.basis.col(i).dot(aw.col(i));
    return acc / static_cast<double>(core.p);
}

Eigen::MatrixXd deterministic_equivalent_matrix(const SpectralContext& ctx,
                                                const SelfConsistentSolution& sol) {
    const auto& core = *ctx.core;
    return core.basis * sol.m_diag.asDiagonal() * core.basis.transpose();
}

}  // namespace rainbow
