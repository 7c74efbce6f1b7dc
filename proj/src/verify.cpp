#include "rainbow/verify.hpp"

#include <Eigen/Dense>
#include <chrono>
#include <cmath>
#include <functional>
#include <sstream>

#include "rainbow/common.hpp"
#include "rainbow/equivalents.hpp"
#include "rainbow/gauss_hermite.hpp"
#include "rainbow/lab.hpp"
#include "rainbow/presets.hpp"

namespace rainbow {

namespace {

constexpr double kGolden = 0.61803398874989484820;  // (sqrt(5) - 1) / 2

Eigen::MatrixXd seeded_gaussian(Eigen::Index rows, Eigen::Index cols, std::uint64_t seed) {
    StreamRng rng(seed);
    Eigen::MatrixXd m(rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i)
        for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = rng.next_normal();
    return m;
}

struct Check {
    std::string name;
    std::function<std::pair<bool, std::string>(const VerifyOptions&)> fn;
};

std::string fmt(double v) {
    std::ostringstream os;
    os.precision(6);
    os << v;
    return os.str();
}

// ---- criterion 2: self-consistent solver ---------------------------------

std::pair<bool, std::string> check_m_closed_form(const VerifyOptions&) {
    const Eigen::Index p = 400;
    CovarianceTriple triple;
    triple.omega = Eigen::MatrixXd::Identity(p, p);
    triple.psi = Eigen::MatrixXd::Identity(1, 1);
    triple.phi = Eigen::MatrixXd::Zero(p, 1);
    SpectralContext ctx = build_spectral_context(triple, Eigen::VectorXd::Zero(1), p, 0.0);
    const double m = solve_m(ctx, 1.0).m;
    const double err = std::abs(m - kGolden);
    if (err > 1e-10) return {false, "golden-ratio case off by " + fmt(err)};

    triple.omega.setZero();
    SpectralContext ctx0 = build_spectral_context(triple, Eigen::VectorXd::Zero(1), p, 0.0);
    const double lambda = 0.37;
    const double m0 = solve_m(ctx0, lambda).m;
    if (m0 != 1.0 / lambda) return {false, "Omega=0 did not give m = 1/lambda exactly"};
    return {true, "m(1)=" + fmt(m) + ", Omega=0 exact"};
}

std::pair<bool, std::string> check_m_bounds(const VerifyOptions&) {
    const Eigen::Index p = 300;
    CovarianceTriple triple;
    triple.omega = Eigen::MatrixXd::Zero(p, p);
    for (Eigen::Index i = 0; i < p; ++i)
        triple.omega(i, i) = std::pow(static_cast<double>(i + 1), -0.3);
    triple.psi = Eigen::MatrixXd::Identity(1, 1);
    triple.phi = Eigen::MatrixXd::Zero(p, 1);
    SpectralContext ctx =
        build_spectral_context(triple, Eigen::VectorXd::Zero(1), 2 * p, 0.0);
    const double tro = ctx.core->trace_omega;
    double prev_m = 1e300;
    for (int i = 0; i < 20; ++i) {
        const double lambda = std::pow(10.0, -6.0 + 8.0 * i / 19.0);
        SelfConsistentSolution sol = solve_m(ctx, lambda);
        const double lower = std::max(
            1.0 / (lambda + tro),
            (1.0 - static_cast<double>(ctx.core->rank) / static_cast<double>(ctx.n)) / lambda);
        if (sol.m < lower * (1.0 - 1e-12) || sol.m > (1.0 + 1e-12) / lambda)
            return {false, "solver bounds violated at lambda=" + fmt(lambda)};
        if (sol.residual > 1e-12 * (lambda + tro))
            return {false, "residual above tolerance at lambda=" + fmt(lambda)};
        if (sol.lambda_m <= 0.0 || sol.lambda_m > 1.0 + 1e-12)
            return {false, "lambda*m outside (0,1] at lambda=" + fmt(lambda)};
        if (sol.d_denom < sol.lambda_m - 1e-10)
            return {false, "denominator D below lambda*m at lambda=" + fmt(lambda)};
        if (sol.m >= prev_m) return {false, "m(lambda) not decreasing at lambda=" + fmt(lambda)};
        prev_m = sol.m;
    }
    return {true, "bounds, residual, monotonicity on 20-point log grid"};
}

// ---- criterion 3: anisotropic resolvent law scaling -----------------------

double mp_mean_abs(Eigen::Index p, const Eigen::MatrixXd& a, double lambda, int draws,
                   std::uint64_t seed) {
    CovarianceTriple triple;
    triple.omega = Eigen::MatrixXd::Zero(p, p);
    for (Eigen::Index i = 0; i < p; ++i)
        triple.omega(i, i) = std::pow(static_cast<double>(i + 1), -0.5) + 0.05;
    triple.psi = Eigen::MatrixXd::Identity(1, 1);
    triple.phi = Eigen::MatrixXd::Zero(p, 1);
    McObservables obs;
    obs.a = a;
    return resolvent_functional_mc(McKind::mp_law, triple, lambda, obs, p, draws, seed).mean;
}

std::pair<bool, std::string> check_mp_scaling(const VerifyOptions& opts) {
    const double lambda = 0.5;
    const int draws = 100;
    std::ostringstream detail;
    for (int which = 0; which < 3; ++which) {
        double ratio = 0.0;
        double vals[2];
        for (int half = 0; half < 2; ++half) {
            const Eigen::Index p = half == 0 ? 400 : 800;
            Eigen::MatrixXd a;
            if (which == 0) {
                a = Eigen::MatrixXd::Identity(p, p);
            } else if (which == 1) {
                a = Eigen::MatrixXd::Zero(p, p);
                for (Eigen::Index i = 0; i < p; ++i)
                    a(i, i) = std::pow(static_cast<double>(i + 1), -0.5) + 0.05;  // Omega itself
            } else {
                a = seeded_gaussian(p, p, opts.seed + 17);
                a /= a.norm() / std::sqrt(static_cast<double>(p));  // unit <|A|^2>
            }
            vals[half] = mp_mean_abs(p, a, lambda, draws, opts.seed + static_cast<unsigned>(which));
        }
        ratio = vals[1] / vals[0];
        detail << (which == 0 ? "I:" : which == 1 ? " Omega:" : " rand:") << fmt(ratio);
        if (!(ratio <= 0.75))
            return {false, "mean |<A(G-M)>| shrank only by " + fmt(ratio) + " when p doubled"};
    }
    return {true, "decay ratios " + detail.str()};
}

// ---- criterion 4: multi-resolvent equivalents vs Monte Carlo --------------

std::pair<bool, std::string> prop1_row(McKind kind, const VerifyOptions& opts) {
    const Eigen::Index p = 400, k = 400, n = 400;
    const double lambda = 0.1;
    const int draws = 200;
    CovarianceTriple triple = synthetic_triple(p, k, opts.seed);
    SpectralContext ctx = build_spectral_context(triple, Eigen::VectorXd::Zero(k), n, 0.0);

    // Observables carry a structured part so every functional is O(1); pure
    // rotation-invariant noise would make the comparison vacuously 0 == 0.
    McObservables obs;
    double det_val = 0.0;
    switch (kind) {
        case McKind::gxz:
            obs.a = triple.phi.transpose() +
                    0.3 * seeded_gaussian(k, p, opts.seed + 3) / std::sqrt(static_cast<double>(p));
            det_val = equiv_gxz(ctx, lambda, obs.a);
            break;
        case McKind::gagb: {
            obs.a = seeded_gaussian(p, p, opts.seed + 5) / std::sqrt(static_cast<double>(p));
            obs.a.diagonal().array() += 1.0;
            obs.b = seeded_gaussian(p, p, opts.seed + 7) / std::sqrt(static_cast<double>(p));
            obs.b.diagonal().array() += 1.0;
            det_val = equiv_gagb(ctx, lambda, obs.a, obs.b);
            break;
        }
        case McKind::xgomgx:
            obs.a = seeded_gaussian(n, n, opts.seed + 11) / std::sqrt(static_cast<double>(n));
            obs.a.diagonal().array() += 1.0;  // keep <A> away from zero
            det_val = equiv_xgomgx(ctx, lambda, obs.a);
            break;
        case McKind::zxgomgxz:
            obs.a = seeded_gaussian(k, k, opts.seed + 13) / std::sqrt(static_cast<double>(k));
            obs.a.diagonal().array() += 1.0;
            det_val = equiv_zxgomgxz(ctx, lambda, obs.a);
            break;
        case McKind::mp_law: throw numeric_error("not a prop1 row");
    }
    if (opts.inject_sign_error && kind == McKind::gxz) det_val = -det_val;

    EmpiricalEstimate mc = resolvent_functional_mc(kind, triple, lambda, obs, n, draws,
                                                   opts.seed + 1000 + static_cast<unsigned>(kind));
    const double err = std::abs(mc.mean - det_val);
    const double tol = std::max(0.05 * std::abs(det_val), 3.0 * mc.stderr_of_mean);
    if (err > tol)
        return {false, "det=" + fmt(det_val) + " mc=" + fmt(mc.mean) + " err=" + fmt(err) +
                           " tol=" + fmt(tol)};
    return {true, "det=" + fmt(det_val) + " mc=" + fmt(mc.mean) + " +- " +
                      fmt(mc.stderr_of_mean)};
}

// ---- criterion 5: linearization decay --------------------------------------

struct DecayRatios {
    double omega, psi, phi;
};

std::pair<bool, std::string> check_linearization_decay(const VerifyOptions& opts) {
    auto ratios_at = [&](int dim) {
        ScenarioConfig cfg = preset_scenario("lincheck");
        // Re-resolve widths at this dimension.
        cfg.dimension = dim;
        cfg.teacher.input_dim = dim;
        cfg.student.input_dim = dim;
        for (auto& l : cfg.teacher.layers) l.width = dim;
        for (auto& l : cfg.student.layers) l.width = dim;

        SampledNetworkPair pair =
            sample_network_pair(cfg, derive_seed(opts.seed, static_cast<unsigned>(dim),
                                                 seed_stream::weights));
        const Eigen::MatrixXd omega0 =
            materialize_covariance(cfg.student.input_covariance, dim, {});
        LinearizationResult lin = linearize_pair(pair.student_weights, cfg.student,
                                                 pair.teacher_weights, cfg.teacher, omega0);
        std::vector<ActivationId> sacts, tacts;
        for (const auto& l : cfg.student.layers) sacts.push_back(l.activation);
        for (const auto& l : cfg.teacher.layers) tacts.push_back(l.activation);

        const Eigen::Index p = cfg.student.output_dim();
        const Eigen::Index k = cfg.teacher.output_dim();
        Eigen::MatrixXd omega_hat = Eigen::MatrixXd::Zero(p, p);
        Eigen::MatrixXd psi_hat = Eigen::MatrixXd::Zero(k, k);
        Eigen::MatrixXd phi_hat = Eigen::MatrixXd::Zero(p, k);
        const long total = 200000;
        const long chunk = 2000;
        StreamRng rng(derive_seed(opts.seed, static_cast<unsigned>(dim) + 7,
                                  seed_stream::test_inputs));
        long done = 0;
        while (done < total) {
            const long m = std::min(chunk, total - done);
            Eigen::MatrixXd g(dim, m);
            for (Eigen::Index i = 0; i < g.rows(); ++i)
                for (Eigen::Index j = 0; j < g.cols(); ++j) g(i, j) = rng.next_normal();
            const Eigen::MatrixXd x = forward_features(pair.student_weights, sacts, g, nullptr);
            const Eigen::MatrixXd z = forward_features(pair.teacher_weights, tacts, g, nullptr);
            omega_hat.noalias() += x * x.transpose();
            psi_hat.noalias() += z * z.transpose();
            phi_hat.noalias() += x * z.transpose();
            done += m;
        }
        omega_hat /= static_cast<double>(total);
        psi_hat /= static_cast<double>(total);
        phi_hat /= static_cast<double>(total);
        DecayRatios r;
        r.omega = (omega_hat - lin.triple.omega).norm() / lin.triple.omega.norm();
        r.psi = (psi_hat - lin.triple.psi).norm() / lin.triple.psi.norm();
        r.phi = (phi_hat - lin.triple.phi).norm() / lin.triple.phi.norm();
        return r;
    };

    const DecayRatios small = ratios_at(100);
    const DecayRatios large = ratios_at(400);
    std::ostringstream detail;
    detail << "omega " << fmt(small.omega) << "->" << fmt(large.omega) << ", psi "
           << fmt(small.psi) << "->" << fmt(large.psi) << ", phi " << fmt(small.phi) << "->"
           << fmt(large.phi);
    if (!(large.omega <= 0.7 * small.omega))
        return {false, "omega ratio did not decay: " + detail.str()};
    if (!(large.psi <= 0.7 * small.psi)) return {false, "psi ratio did not decay: " + detail.str()};
    if (!(large.phi <= 0.7 * small.phi)) return {false, "phi ratio did not decay: " + detail.str()};
    return {true, detail.str()};
}

// ---- criterion 6: kappa oracles -------------------------------------------

std::pair<bool, std::string> check_kappa_closed(const VerifyOptions&) {
    const double k1 = kappa1(ActivationId::sign, 1.0);
    const double expected_k1 = std::sqrt(2.0 / M_PI);
    if (std::abs(k1 - expected_k1) > 1e-10) return {false, "sign kappa1 off"};
    KappaLayer layer = make_kappa_layer(ActivationId::sign, 1.0);
    if (std::abs(layer.kappa_star_sq - (1.0 - 2.0 / M_PI)) > 1e-10)
        return {false, "sign kappa_star_sq off"};
    return {true, "sign closed forms to 1e-10"};
}

std::pair<bool, std::string> check_kappa_mc(const VerifyOptions&) {
    // Frozen 1e7-sample Monte Carlo oracles (mean, sigma of the mean).
    struct Golden {
        const char* name;
        double value, sigma, computed;
    };
    const Golden rows[] = {
        {"tanh kappa1 r=1", 0.605694811300, 9.872e-05, kappa1(ActivationId::tanh, 1.0)},
        {"tanh second r=0.7", 0.330504069498, 9.014e-05, second_moment(ActivationId::tanh, 0.7)},
        {"erf kappa1 r=1", 0.651455908852, 1.204e-04, kappa1(ActivationId::erf, 1.0)},
        {"erf second r=0.7", 0.396504718507, 1.030e-04, second_moment(ActivationId::erf, 0.7)},
        {"cross tanh x sign", 0.248426365978, 1.824e-04,
         cross_moment(ActivationId::tanh, ActivationId::sign, 1.0, 1.0, 0.5)},
    };
    for (const auto& row : rows)
        if (std::abs(row.computed - row.value) > 3.0 * row.sigma)
            return {false, std::string(row.name) + ": quadrature " + fmt(row.computed) +
                               " vs MC " + fmt(row.value) + " beyond 3 sigma"};
    return {true, "tanh/erf/cross quadrature within 3 sigma of 1e7-sample MC"};
}

std::pair<bool, std::string> check_kappa_doubling(const VerifyOptions&) {
    auto second = [](int order, ActivationId act) {
        const QuadratureRule& rule = gauss_hermite(order);
        double acc = 0.0;
        for (std::size_t i = 0; i < rule.nodes.size(); ++i) {
            const double t = activation_eval(act, rule.nodes[i], 1.0);
            acc += rule.weights[i] * t * t;
        }
        return acc;
    };
    // The engine's acceptance ladder: consecutive orders 200 -> 400.
    for (ActivationId act : {ActivationId::tanh, ActivationId::erf}) {
        const double lo = second(200, act);
        const double hi = second(400, act);
        if (std::abs(lo - hi) > 1e-10)
            return {false, std::string(activation_name(act)) + ": order 200 vs 400 disagree by " +
                               fmt(std::abs(lo - hi))};
    }
    return {true, "order 200 vs 400 agree to 1e-10 for tanh and erf"};
}

// ---- criterion 7: ridge solver ---------------------------------------------

std::pair<bool, std::string> check_ridge(const VerifyOptions& opts) {
    StreamRng rng(derive_seed(opts.seed, 0, seed_stream::oracle));
    for (int i = 0; i < 20; ++i) {
        const Eigen::Index p = 50 + static_cast<Eigen::Index>(rng.next_u64() % 200);
        const Eigen::Index n = 50 + static_cast<Eigen::Index>(rng.next_u64() % 200);
        const double lambda = 0.01 + rng.next_uniform();
        Eigen::MatrixXd x = seeded_gaussian(p, n, opts.seed + 100 + static_cast<unsigned>(i));
        Eigen::VectorXd y =
            seeded_gaussian(n, 1, opts.seed + 200 + static_cast<unsigned>(i)).col(0);
        RidgeFit fit = ridge_fit(x, y, lambda);
        if (fit.optimality_residual > 1e-8 * std::max(fit.rhs_norm, 1e-300))
            return {false, "optimality residual too large on instance " + std::to_string(i)};
        // Explicit primal and dual paths must agree.
        const double pd = static_cast<double>(p);
        Eigen::MatrixXd gp = x * x.transpose() / pd;
        gp.diagonal().array() += lambda;
        const Eigen::VectorXd primal = gp.llt().solve(x * y / std::sqrt(pd));
        Eigen::MatrixXd gd = x.transpose() * x / pd;
        gd.diagonal().array() += lambda;
        const Eigen::VectorXd dual = x * gd.llt().solve(y) / std::sqrt(pd);
        if ((primal - dual).norm() > 1e-8 * std::max(primal.norm(), 1e-300))
            return {false, "primal/dual disagreement on instance " + std::to_string(i)};
    }
    return {true, "20 rectangular instances: residual and primal/dual within 1e-8"};
}

// ---- criterion 8: null-predictor limit -------------------------------------

std::pair<bool, std::string> check_null_predictor(const VerifyOptions& opts) {
    ScenarioConfig cfg = preset_scenario("lab-small");
    cfg.ridge_lambda = 1e6;

    const Eigen::MatrixXd omega0 =
        materialize_covariance(cfg.student.input_covariance, cfg.dimension, {});
    SampledNetworkPair pair =
        sample_network_pair(cfg, derive_seed(cfg.master_seed, 0, seed_stream::prototype));
    LinearizationResult lin = linearize_pair(pair.student_weights, cfg.student,
                                             pair.teacher_weights, cfg.teacher, omega0);
    const Eigen::Index p = cfg.student.output_dim();
    const Eigen::Index n = p;
    SpectralContext ctx = build_spectral_context(lin.triple, pair.theta_star, n, cfg.noise_trace);
    TheoryPrediction pred = theory_gen_error(ctx, cfg.ridge_lambda);
    const double null_value = pair.theta_star.dot(lin.triple.psi * pair.theta_star) /
                              static_cast<double>(cfg.teacher.output_dim());
    if (std::abs(pred.gen_error - null_value) > 0.01 * null_value)
        return {false, "theory " + fmt(pred.gen_error) + " vs null " + fmt(null_value)};

    ReplicateSummary summary =
        run_replicates(cfg, 1.0, cfg.replicates, cfg.master_seed, opts.threads);
    const double gap = std::abs(summary.empirical.mean - summary.theory.mean);
    if (gap > 3.0 * std::max(summary.empirical.stderr_of_mean, 1e-12))
        return {false, "lab mean " + fmt(summary.empirical.mean) + " vs theory " +
                           fmt(summary.theory.mean) + " beyond 3 stderr"};
    return {true, "theory=" + fmt(pred.gen_error) + " null=" + fmt(null_value) +
                      " lab=" + fmt(summary.empirical.mean)};
}

const std::vector<Check>& battery() {
    static const std::vector<Check> checks = {
        {"m-closed-form", [](const VerifyOptions& o) { return check_m_closed_form(o); }},
        {"m-bounds", [](const VerifyOptions& o) { return check_m_bounds(o); }},
        {"mp-scaling", [](const VerifyOptions& o) { return check_mp_scaling(o); }},
        {"prop1-gxz", [](const VerifyOptions& o) { return prop1_row(McKind::gxz, o); }},
        {"prop1-gagb", [](const VerifyOptions& o) { return prop1_row(McKind::gagb, o); }},
        {"prop1-xgomgx", [](const VerifyOptions& o) { return prop1_row(McKind::xgomgx, o); }},
        {"prop1-zxgomgxz", [](const VerifyOptions& o) { return prop1_row(McKind::zxgomgxz, o); }},
        {"linearization-decay",
         [](const VerifyOptions& o) { return check_linearization_decay(o); }},
        {"kappa-closed", [](const VerifyOptions& o) { return check_kappa_closed(o); }},
        {"kappa-mc", [](const VerifyOptions& o) { return check_kappa_mc(o); }},
        {"kappa-doubling", [](const VerifyOptions& o) { return check_kappa_doubling(o); }},
        {"ridge", [](const VerifyOptions& o) { return check_ridge(o); }},
        {"null-predictor", [](const VerifyOptions& o) { return check_null_predictor(o); }},
    };
    return checks;
}

}  // namespace

CovarianceTriple synthetic_triple(Eigen::Index p, Eigen::Index k, std::uint64_t seed) {
    // Joint (p+k) covariance with power-law spectrum in a generic seeded
    // basis; exactly PSD by construction.
    const Eigen::Index total = p + k;
    Eigen::MatrixXd raw = seeded_gaussian(total, total, seed);
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(raw);
    Eigen::MatrixXd q = qr.householderQ();
    Eigen::VectorXd spectrum(total);
    for (Eigen::Index i = 0; i < total; ++i)
        spectrum(i) = 2.0 * std::pow(static_cast<double>(i + 1), -0.4) + 0.05;
    const Eigen::MatrixXd joint = q * spectrum.asDiagonal() * q.transpose();
    CovarianceTriple triple;
    triple.omega = joint.topLeftCorner(p, p);
    triple.psi = joint.bottomRightCorner(k, k);
    triple.phi = joint.topRightCorner(p, k);
    return triple;
}

std::vector<std::string> verification_check_names() {
    std::vector<std::string> names;
    for (const auto& c : battery()) names.push_back(c.name);
    return names;
}

std::vector<CheckResult> run_verification_battery(const VerifyOptions& opts) {
    std::vector<CheckResult> results;
    for (const auto& check : battery()) {
        if (opts.only && *opts.only != check.name) continue;
        CheckResult res;
        res.name = check.name;
        const auto t0 = std::chrono::steady_clock::now();
        try {
            auto [pass, detail] = check.fn(opts);
            res.pass = pass;
            res.detail = detail;
        } catch (const std::exception& e) {
            res.pass = false;
            res.detail = std::string("exception: ") + e.what();
        }
        res.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        results.push_back(std::move(res));
    }
    if (opts.only && results.empty())
        throw config_error("unknown check '" + *opts.only + "'");
    return results;
}

}  // namespace rainbow
