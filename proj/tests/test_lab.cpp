#include <doctest.h>

#include <Eigen/Dense>
#include <cmath>

#include "rainbow/common.hpp"
#include "rainbow/lab.hpp"
#include "rainbow/presets.hpp"
#include "rainbow/verify.hpp"

using namespace rainbow;

namespace {

ScenarioConfig shrink(const char* preset, int dim) {
    ScenarioConfig cfg = preset_scenario(preset);
    cfg.dimension = dim;
    cfg.teacher.input_dim = dim;
    cfg.student.input_dim = dim;
    for (auto& l : cfg.teacher.layers) l.width = dim;
    for (auto& l : cfg.student.layers) l.width = dim;
    return cfg;
}

ScenarioConfig linear_pair_scenario(int dim) {
    ScenarioConfig cfg = shrink("lab-small", dim);
    cfg.noise_trace = 0.0;
    cfg.teacher.layers[0].activation = ActivationId::identity;
    cfg.student.layers[0].activation = ActivationId::identity;
    return cfg;
}

}  // namespace

TEST_CASE("stream rng is deterministic") {
    StreamRng a(42), b(42);
    for (int i = 0; i < 100; ++i) CHECK(a.next_normal() == b.next_normal());
}

TEST_CASE("sampling is deterministic and ties are bit-identical") {
    ScenarioConfig cfg = shrink("fig1-gamma0.5", 32);
    SampledNetworkPair p1 = sample_network_pair(cfg, 1234);
    SampledNetworkPair p2 = sample_network_pair(cfg, 1234);
    REQUIRE(p1.student_weights.size() == 3);
    for (std::size_t l = 0; l < 3; ++l)
        CHECK((p1.student_weights[l] - p2.student_weights[l]).norm() == 0.0);
    CHECK((p1.theta_star - p2.theta_star).norm() == 0.0);
    // W2 = W1 tie.
    CHECK((p1.student_weights[0] - p1.student_weights[1]).norm() == 0.0);
    CHECK(p1.student_draw_notes[1] == "tied_to_layer_0");
    // Different seed, different draw.
    SampledNetworkPair p3 = sample_network_pair(cfg, 1235);
    CHECK((p1.student_weights[0] - p3.student_weights[0]).norm() > 0.0);
}

TEST_CASE("fresh identity rows concentrate around the identity covariance") {
    // 10% operator-norm concentration needs rows >> dim (the square case
    // sits on the Marchenko-Pastur edge at O(1) error), so use a tall layer.
    ScenarioConfig cfg = shrink("lab-small", 50);
    cfg.student.layers[0].rule.kind = WeightRule::Kind::fresh_gaussian;
    cfg.student.layers[0].rule.cov = CovarianceSpec{};
    cfg.student.layers[0].width = 50000;
    cfg.student.layers[0].width_is_dim = false;
    SampledNetworkPair pair = sample_network_pair(cfg, 7);
    Eigen::MatrixXd est = estimate_row_covariance(pair.student_weights[0]);
    const double rel = symmetric_operator_norm(est - Eigen::MatrixXd::Identity(50, 50));
    CHECK(rel <= 0.10);
}

TEST_CASE("forward features: identity chain, odd zero, scalar tanh") {
    Eigen::MatrixXd w1(2, 3), w2(2, 2);
    w1 << 1, 0, 1, 0, 2, 0;
    w2 << 0.5, 0, 0, 0.5;
    Eigen::MatrixXd inputs = Eigen::MatrixXd::Random(3, 5);
    Eigen::MatrixXd out = forward_features(
        {w1, w2}, {ActivationId::identity, ActivationId::identity}, inputs);
    CHECK((out - w2 * w1 * inputs).norm() <= 1e-14);

    Eigen::MatrixXd zero_out = forward_features(
        {w1}, {ActivationId::tanh}, Eigen::MatrixXd::Zero(3, 4));
    CHECK(zero_out.norm() == 0.0);

    Eigen::MatrixXd ws(1, 1);
    ws << 0.7;
    Eigen::MatrixXd xs(1, 1);
    xs << 1.3;
    Eigen::MatrixXd scalar = forward_features({ws}, {ActivationId::tanh}, xs);
    CHECK(scalar(0, 0) == doctest::Approx(std::tanh(0.7 * 1.3)).epsilon(1e-15));

    CHECK_THROWS_AS(
        forward_features({ws}, {ActivationId::centered_relu}, xs, nullptr), config_error);
}

TEST_CASE("ridge fit closed forms and residuals") {
    SUBCASE("zero features give the zero fit") {
        Eigen::MatrixXd x = Eigen::MatrixXd::Zero(6, 9);
        RidgeFit fit = ridge_fit(x, Eigen::VectorXd::Ones(9), 0.5);
        CHECK(fit.theta_hat.norm() == 0.0);
    }
    SUBCASE("scalar instance solves exactly") {
        Eigen::MatrixXd x(1, 1);
        x << 2.0;
        Eigen::VectorXd y(1);
        y << 1.0;
        const double lambda = 1e-4;
        RidgeFit fit = ridge_fit(x, y, lambda);
        CHECK(fit.theta_hat(0) == doctest::Approx(2.0 / (4.0 + lambda)).epsilon(1e-12));
    }
    SUBCASE("primal and dual paths agree on a rectangular instance") {
        StreamRng rng(5);
        Eigen::MatrixXd x(200, 300);
        for (Eigen::Index i = 0; i < x.rows(); ++i)
            for (Eigen::Index j = 0; j < x.cols(); ++j) x(i, j) = rng.next_normal();
        Eigen::VectorXd y(300);
        for (Eigen::Index i = 0; i < y.size(); ++i) y(i) = rng.next_normal();
        const double lambda = 0.3;
        RidgeFit primal = ridge_fit(x, y, lambda);  // p < n -> primal
        // Dual by hand.
        Eigen::MatrixXd gd = x.transpose() * x / 200.0;
        gd.diagonal().array() += lambda;
        Eigen::VectorXd dual = x * gd.llt().solve(y) / std::sqrt(200.0);
        CHECK((primal.theta_hat - dual).norm() <= 1e-8 * dual.norm());
        CHECK(primal.optimality_residual <= 1e-8 * primal.rhs_norm);
        CHECK(primal.gram_max_eig >= primal.gram_min_eig);
        CHECK(primal.gram_min_eig >= lambda * (1 - 1e-12));
    }
    SUBCASE("non-finite inputs are rejected") {
        Eigen::MatrixXd x = Eigen::MatrixXd::Ones(2, 2);
        Eigen::VectorXd y(2);
        y << 1.0, std::numeric_limits<double>::infinity();
        CHECK_THROWS_AS(ridge_fit(x, y, 0.1), numeric_error);
    }
}

TEST_CASE("analytic generalization error closed forms") {
    const Eigen::Index p = 12, k = 8;
    CovarianceTriple t = synthetic_triple(p, k, 15);
    Eigen::VectorXd theta(k);
    for (Eigen::Index i = 0; i < k; ++i) theta(i) = 0.3 * (i + 1);

    RidgeFit null_fit;
    null_fit.theta_hat = Eigen::VectorXd::Zero(p);
    CHECK(empirical_gen_error_analytic(null_fit, t, theta) ==
          doctest::Approx(theta.dot(t.psi * theta) / static_cast<double>(k)).epsilon(1e-14));

    // Perfectly matched population problem: Phi = Omega = Psi (p = k) and
    // theta_hat / sqrt(p) = theta* / sqrt(k) interpolates to zero error.
    CovarianceTriple same;
    same.omega = t.omega;
    same.psi = t.omega;
    same.phi = t.omega;
    Eigen::VectorXd theta_p = Eigen::VectorXd::LinSpaced(p, 0.1, 1.0);
    RidgeFit fit;
    fit.theta_hat = theta_p;
    const double err = empirical_gen_error_analytic(fit, same, theta_p);
    CHECK(std::abs(err) <= 1e-12 * theta_p.squaredNorm());
}

TEST_CASE("analytic error matches a fresh-test-set monte carlo on a linear pair") {
    ScenarioConfig cfg = linear_pair_scenario(80);
    SampledNetworkPair pair = sample_network_pair(cfg, 21);
    const Eigen::MatrixXd omega0 = Eigen::MatrixXd::Identity(80, 80);
    LinearizationResult lin = linearize_pair(pair.student_weights, cfg.student,
                                             pair.teacher_weights, cfg.teacher, omega0);

    StreamRng rng(derive_seed(33, 0, seed_stream::train_inputs));
    const Eigen::Index n = 120;
    Eigen::MatrixXd inputs(80, n);
    for (Eigen::Index i = 0; i < inputs.rows(); ++i)
        for (Eigen::Index j = 0; j < inputs.cols(); ++j) inputs(i, j) = rng.next_normal();
    std::vector<ActivationId> acts = {ActivationId::identity};
    const Eigen::MatrixXd x = forward_features(pair.student_weights, acts, inputs);
    const Eigen::MatrixXd z = forward_features(pair.teacher_weights, acts, inputs);
    Eigen::VectorXd y = z.transpose() * pair.theta_star / std::sqrt(80.0);
    RidgeFit fit = ridge_fit(x, y, cfg.ridge_lambda);
    const double analytic = empirical_gen_error_analytic(fit, lin.triple, pair.theta_star);

    // Fresh test set of 1e5 points with noiseless labels.
    const Eigen::Index m = 100000;
    StreamRng trng(derive_seed(33, 0, seed_stream::test_inputs));
    double sum = 0.0, sumsq = 0.0;
    const Eigen::Index chunk = 5000;
    for (Eigen::Index done = 0; done < m; done += chunk) {
        Eigen::MatrixXd tin(80, chunk);
        for (Eigen::Index i = 0; i < tin.rows(); ++i)
            for (Eigen::Index j = 0; j < tin.cols(); ++j) tin(i, j) = trng.next_normal();
        const Eigen::MatrixXd xt = forward_features(pair.student_weights, acts, tin);
        const Eigen::MatrixXd zt = forward_features(pair.teacher_weights, acts, tin);
        const Eigen::VectorXd truth = zt.transpose() * pair.theta_star / std::sqrt(80.0);
        const Eigen::VectorXd pred = xt.transpose() * fit.theta_hat / std::sqrt(80.0);
        for (Eigen::Index j = 0; j < chunk; ++j) {
            const double e = truth(j) - pred(j);
            sum += e * e;
            sumsq += e * e * e * e;
        }
    }
    const double mc_mean = sum / static_cast<double>(m);
    const double mc_stderr = std::sqrt(
        (sumsq / static_cast<double>(m) - mc_mean * mc_mean) / static_cast<double>(m));
    CHECK(std::abs(analytic - mc_mean) <= 3.0 * mc_stderr);
}

TEST_CASE("aggregation semantics: identical outcomes have zero stderr") {
    // run_replicates on the same scenario twice is bit-identical, and its
    // stderr honors the sample-std definition.
    ScenarioConfig cfg = shrink("lab-small", 40);
    ReplicateSummary s1 = run_replicates(cfg, 1.0, 4, 999, 1);
    ReplicateSummary s2 = run_replicates(cfg, 1.0, 4, 999, 1);
    CHECK(s1.empirical.mean == s2.empirical.mean);
    CHECK(s1.empirical.stderr_of_mean == s2.empirical.stderr_of_mean);
    for (int i = 0; i < 4; ++i) CHECK(s1.empirical_values[i] == s2.empirical_values[i]);

    double mean = 0.0;
    for (double v : s1.empirical_values) mean += v;
    mean /= 4.0;
    double ss = 0.0;
    for (double v : s1.empirical_values) ss += (v - mean) * (v - mean);
    CHECK(s1.empirical.stderr_of_mean ==
          doctest::Approx(std::sqrt(ss / 3.0 / 4.0)).epsilon(1e-12));
    CHECK_THROWS_AS(run_replicates(cfg, 1.0, 1, 999, 1), numeric_error);
}

TEST_CASE("replicates are thread-count independent") {
    ScenarioConfig cfg = shrink("lab-small", 48);
    ReplicateSummary serial = run_replicates(cfg, 1.5, 6, 31337, 1);
    ReplicateSummary pooled = run_replicates(cfg, 1.5, 6, 31337, 4);
    for (int i = 0; i < 6; ++i) {
        CHECK(serial.empirical_values[i] == pooled.empirical_values[i]);
        CHECK(serial.theory_values[i] == pooled.theory_values[i]);
    }
    CHECK(serial.empirical.mean == pooled.empirical.mean);
}

TEST_CASE("doubling replicates shrinks the standard error like 1/sqrt(2)") {
    ScenarioConfig cfg = shrink("lab-small", 64);
    ReplicateSummary half = run_replicates(cfg, 1.0, 24, 5150, 2);
    ReplicateSummary full = run_replicates(cfg, 1.0, 48, 5150, 2);
    const double ratio = full.empirical.stderr_of_mean / half.empirical.stderr_of_mean;
    CHECK(std::abs(ratio * std::sqrt(2.0) - 1.0) <= 0.30);
}

TEST_CASE("a full noise covariance spec colors the training noise") {
    ScenarioConfig scalar_cfg = shrink("lab-small", 32);
    ScenarioConfig colored_cfg = scalar_cfg;
    CovarianceSpec sigma;
    sigma.kind = CovarianceSpec::Kind::identity;
    sigma.scale = scalar_cfg.noise_trace;
    colored_cfg.noise_covariance = sigma;
    // Isotropic Sigma with matching trace reproduces the scalar path exactly.
    ReplicateSummary a = run_replicates(scalar_cfg, 1.0, 3, 11, 1);
    ReplicateSummary b = run_replicates(colored_cfg, 1.0, 3, 11, 1);
    for (int i = 0; i < 3; ++i) CHECK(a.empirical_values[i] == b.empirical_values[i]);

    ScenarioConfig bad = colored_cfg;
    bad.noise_covariance->scale = 2.0 * scalar_cfg.noise_trace;
    CHECK_THROWS_WITH_AS(run_replicates(bad, 1.0, 2, 11, 1), doctest::Contains("trace"),
                         config_error);
}

TEST_CASE("replicate errors carry the replicate index and child seed") {
    ScenarioConfig cfg = shrink("lab-small", 16);
    cfg.student.layers[0].rule.kind = WeightRule::Kind::external;
    try {
        run_replicates(cfg, 1.0, 2, 1, 1);
        FAIL("expected an error");
    } catch (const numeric_error& e) {
        CHECK(std::string(e.what()).find("replicate 0") != std::string::npos);
        CHECK(std::string(e.what()).find("child seed") != std::string::npos);
    }
}

TEST_CASE("joint gaussian sampler honors the block structure") {
    SUBCASE("independent blocks stay uncorrelated") {
        const Eigen::Index p = 400, k = 200, n = 20000;
        CovarianceTriple t;
        t.omega = Eigen::MatrixXd::Identity(p, p);
        t.psi = Eigen::MatrixXd::Identity(k, k);
        t.phi = Eigen::MatrixXd::Zero(p, k);
        auto [x, z] = sample_joint_gaussian_features(t, n, 1);
        const Eigen::MatrixXd cross = x * z.transpose() / static_cast<double>(n);
        // Concentration budget ~ ||Omega||^(1/2) ||Psi||^(1/2) (sqrt(p/n)+sqrt(k/n)).
        const double budget = 1.5 * (std::sqrt(static_cast<double>(p) / n) +
                                     std::sqrt(static_cast<double>(k) / n));
        const double top = std::sqrt(symmetric_operator_norm(cross * cross.transpose()));
        CHECK(top <= budget);
    }
    SUBCASE("fully tied blocks produce identical draws") {
        const Eigen::Index p = 50;
        CovarianceTriple t = synthetic_triple(p, p, 61);
        CovarianceTriple tied;
        tied.omega = t.omega;
        tied.psi = t.omega;
        tied.phi = t.omega;
        auto [x, z] = sample_joint_gaussian_features(tied, 200, 2);
        CHECK((x - z).norm() <= 1e-8 * x.norm());
    }
    SUBCASE("indefinite joint blocks are rejected with the worst eigenvalue") {
        const Eigen::Index p = 10;
        CovarianceTriple bad;
        bad.omega = 0.2 * Eigen::MatrixXd::Identity(p, p);
        bad.psi = 0.2 * Eigen::MatrixXd::Identity(p, p);
        bad.phi = Eigen::MatrixXd::Identity(p, p);
        CHECK_THROWS_WITH_AS(sample_joint_gaussian_features(bad, 5, 3),
                             doctest::Contains("indefinite"), numeric_error);
    }
    SUBCASE("marginal covariance concentrates at p = 200") {
        const Eigen::Index p = 200, k = 20, n = 100000;
        CovarianceTriple t = synthetic_triple(p, k, 71);
        JointGaussianSampler sampler(t);
        Eigen::MatrixXd acc = Eigen::MatrixXd::Zero(p, p);
        const Eigen::Index chunk = 10000;
        for (Eigen::Index done = 0; done < n; done += chunk) {
            auto [x, z] = sampler.sample(chunk, 100 + done);
            acc.noalias() += x * x.transpose();
        }
        acc /= static_cast<double>(n);
        CHECK(symmetric_operator_norm(acc - t.omega) <= 0.05 * symmetric_operator_norm(t.omega));
    }
}

TEST_CASE("resolvent functional at huge lambda approaches <A>/lambda") {
    const Eigen::Index p = 60, n = 80;
    CovarianceTriple t = synthetic_triple(p, 10, 81);
    const double lambda = 1e6;
    auto [x, z] = sample_joint_gaussian_features(t, n, 4);
    Eigen::MatrixXd gram = x * x.transpose() / static_cast<double>(p);
    gram.diagonal().array() += lambda;
    const Eigen::MatrixXd g = gram.llt().solve(Eigen::MatrixXd::Identity(p, p));
    Eigen::MatrixXd a = Eigen::MatrixXd::Identity(p, p);
    const double ag = (g * a).trace() / static_cast<double>(p);
    CHECK(std::abs(ag - 1.0 / lambda) <= 0.01 / lambda);
}

TEST_CASE("quadratic forms concentrate (hanson-wright scale)") {
    const Eigen::Index p = 150;
    CovarianceTriple t = synthetic_triple(p, 10, 91);
    JointGaussianSampler sampler(t);
    Eigen::MatrixXd a = Eigen::MatrixXd::Zero(p, p);
    {
        StreamRng rng(271828);
        for (Eigen::Index i = 0; i < p; ++i)
            for (Eigen::Index j = 0; j < p; ++j) a(i, j) = rng.next_normal();
        a = 0.5 * (a + a.transpose());
    }
    const double center = (t.omega * a).trace();
    const int draws = 500;
    double sum = 0.0, sumsq = 0.0;
    for (int i = 0; i < draws; ++i) {
        auto [x, z] = sampler.sample(1, 1000 + static_cast<unsigned>(i));
        const double q = x.col(0).dot(a * x.col(0)) - center;
        sum += q;
        sumsq += q * q;
    }
    const double mean = sum / draws;
    const double sd = std::sqrt(sumsq / draws - mean * mean);
    CHECK(sd <= 2.0 * symmetric_operator_norm(t.omega) * a.norm());
    CHECK(std::abs(mean) <= 3.0 * sd / std::sqrt(static_cast<double>(draws)));
}

TEST_CASE("mc functionals are reproducible and validated") {
    const Eigen::Index p = 40, k = 30, n = 35;
    CovarianceTriple t = synthetic_triple(p, k, 101);
    McObservables obs;
    obs.a = Eigen::MatrixXd::Identity(p, p);
    EmpiricalEstimate e1 = resolvent_functional_mc(McKind::mp_law, t, 0.5, obs, n, 8, 3);
    EmpiricalEstimate e2 = resolvent_functional_mc(McKind::mp_law, t, 0.5, obs, n, 8, 3);
    CHECK(e1.mean == e2.mean);
    CHECK(e1.reps == 8);
    CHECK_THROWS_AS(resolvent_functional_mc(McKind::gxz, t, 0.5, obs, n, 8, 3), numeric_error);
}
