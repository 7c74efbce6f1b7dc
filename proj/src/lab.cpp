#include "rainbow/lab.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <thread>

#include "rainbow/common.hpp"
#include "rainbow/matrix_io.hpp"

namespace rainbow {

namespace {

void fill_gaussian(Eigen::MatrixXd& m, StreamRng& rng, double std_dev) {
    for (Eigen::Index i = 0; i < m.rows(); ++i)
        for (Eigen::Index j = 0; j < m.cols(); ++j) m(i, j) = std_dev * rng.next_normal();
}

EmpiricalEstimate aggregate(const std::vector<double>& values, std::uint64_t seed) {
    EmpiricalEstimate est;
    est.reps = static_cast<int>(values.size());
    est.seed = seed;
    if (values.empty()) return est;
    double mean = 0.0;
    for (double v : values) mean += v;
    mean /= static_cast<double>(values.size());
    double ss = 0.0;
    for (double v : values) ss += (v - mean) * (v - mean);
    const double var = values.size() > 1 ? ss / static_cast<double>(values.size() - 1) : 0.0;
    est.mean = mean;
    est.stderr_of_mean = std::sqrt(var / static_cast<double>(values.size()));
    return est;
}

// Ordered parallel-for: worker threads pull indices from a counter, results
// land in index-addressed slots, so aggregation order never depends on the
// thread count.
template <class Fn>
void parallel_for(int count, int threads, Fn&& fn) {
    threads = std::max(1, std::min(threads, count));
    if (threads == 1) {
        for (int i = 0; i < count; ++i) fn(i);
        return;
    }
    std::atomic<int> next{0};
    std::vector<std::string> errors(static_cast<std::size_t>(count));
    std::vector<std::thread> pool;
    pool.reserve(static_cast<std::size_t>(threads));
    for (int t = 0; t < threads; ++t) {
        pool.emplace_back([&]() {
            for (;;) {
                const int i = next.fetch_add(1);
                if (i >= count) return;
                try {
                    fn(i);
                } catch (const std::exception& e) {
                    errors[static_cast<std::size_t>(i)] = e.what();
                }
            }
        });
    }
    for (auto& th : pool) th.join();
    for (int i = 0; i < count; ++i)
        if (!errors[static_cast<std::size_t>(i)].empty())
            throw numeric_error(errors[static_cast<std::size_t>(i)]);
}

}  // namespace

double StreamRng::next_normal() {
    if (has_spare_) {
        has_spare_ = false;
        return spare_;
    }
    const double u1 = next_uniform();
    const double u2 = next_uniform();
    const double mag = std::sqrt(-2.0 * std::log(u1));
    spare_ = mag * std::sin(2.0 * M_PI * u2);
    has_spare_ = true;
    return mag * std::cos(2.0 * M_PI * u2);
}

SampledNetworkPair sample_network_pair(const ScenarioConfig& scenario, std::uint64_t seed) {
    SampledNetworkPair pair;
    pair.seed = seed;
    WeightContext ctx;
    ctx.student = &pair.student_weights;
    ctx.teacher = &pair.teacher_weights;

    std::uint64_t atom_counter = 0;
    auto fresh_matrix = [&](Eigen::Index out_dim, Eigen::Index in_dim,
                            const Eigen::MatrixXd& cov) {
        StreamRng rng(derive_seed(seed, atom_counter++, seed_stream::weights));
        Eigen::MatrixXd z(out_dim, in_dim);
        fill_gaussian(z, rng, 1.0 / std::sqrt(static_cast<double>(in_dim)));
        return Eigen::MatrixXd(z * covariance_sqrt(cov));
    };

    auto sample_network = [&](const RainbowSpec& net, bool is_teacher) {
        auto& weights = is_teacher ? pair.teacher_weights : pair.student_weights;
        auto& notes = is_teacher ? pair.teacher_draw_notes : pair.student_draw_notes;
        for (int l = 0; l < net.depth(); ++l) {
            const auto& layer = net.layers[static_cast<std::size_t>(l)];
            const Eigen::Index out_dim = layer.width;
            const Eigen::Index in_dim = net.layer_input_dim(l);
            switch (layer.rule.kind) {
                case WeightRule::Kind::fresh_gaussian: {
                    Eigen::MatrixXd cov = materialize_covariance(layer.rule.cov, in_dim, ctx);
                    weights.push_back(fresh_matrix(out_dim, in_dim, cov));
                    notes.push_back("fresh");
                    break;
                }
                case WeightRule::Kind::tied_to_layer: {
                    weights.push_back(weights[static_cast<std::size_t>(layer.rule.tied_index)]);
                    notes.push_back("tied_to_layer_" + std::to_string(layer.rule.tied_index));
                    break;
                }
                case WeightRule::Kind::mixed: {
                    Eigen::MatrixXd cov =
                        materialize_covariance(layer.rule.fresh_cov, in_dim, ctx);
                    Eigen::MatrixXd w = layer.rule.fresh_coeff * fresh_matrix(out_dim, in_dim, cov);
                    const auto& tw = pair.teacher_weights[static_cast<std::size_t>(
                        layer.rule.teacher_layer)];
                    if (tw.rows() != out_dim || tw.cols() != in_dim)
                        throw config_error("sample_network_pair: mixed rule shape mismatch");
                    w += layer.rule.teacher_coeff * tw;
                    weights.push_back(std::move(w));
                    notes.push_back("mixed_teacher_" + std::to_string(layer.rule.teacher_layer));
                    break;
                }
                case WeightRule::Kind::function_of_previous: {
                    CovarianceSpec cov;
                    cov.kind = CovarianceSpec::Kind::function_of_weights;
                    cov.rule = layer.rule.rule;
                    cov.source_network = is_teacher ? "teacher" : "student";
                    cov.source_layer = layer.rule.source_layer;
                    cov.shift = layer.rule.shift;
                    Eigen::MatrixXd c = materialize_covariance(cov, in_dim, ctx);
                    weights.push_back(fresh_matrix(out_dim, in_dim, c));
                    notes.push_back("function_of_layer_" + std::to_string(layer.rule.source_layer));
                    break;
                }
                case WeightRule::Kind::external:
                    throw config_error(
                        "sample_network_pair: layer marked external; ingest weights via the "
                        "linearize command instead");
            }
        }
    };

    sample_network(scenario.teacher, true);
    sample_network(scenario.student, false);

    const Eigen::Index k = scenario.teacher.output_dim();
    if (scenario.teacher.readout.kind == ReadoutSpec::Kind::iid_gaussian) {
        StreamRng rng(derive_seed(seed, 0, seed_stream::theta_star));
        pair.theta_star.resize(k);
        const double sd = std::sqrt(scenario.teacher.readout.variance);
        for (Eigen::Index i = 0; i < k; ++i) pair.theta_star(i) = sd * rng.next_normal();
    } else {
        Eigen::MatrixXd m = read_matrix(scenario.teacher.readout.path);
        if (m.size() != k) throw config_error("sample_network_pair: theta_star file length != k");
        pair.theta_star = Eigen::Map<Eigen::VectorXd>(m.data(), m.size());
    }
    return pair;
}

Eigen::MatrixXd forward_features(const std::vector<Eigen::MatrixXd>& weights,
                                 const std::vector<ActivationId>& activations,
                                 const Eigen::MatrixXd& inputs,
                                 const std::vector<double>* layer_r) {
    if (weights.size() != activations.size())
        throw config_error("forward_features: weights/activations length mismatch");
    Eigen::MatrixXd h = inputs;
    for (std::size_t l = 0; l < weights.size(); ++l) {
        if (weights[l].cols() != h.rows())
            throw config_error("forward_features: dimension mismatch at layer " +
                               std::to_string(l));
        h = weights[l] * h;
        const ActivationId act = activations[l];
        double r = 0.0;
        if (act == ActivationId::centered_relu) {
            if (layer_r == nullptr || layer_r->size() <= l)
                throw config_error(
                    "forward_features: centered_relu needs per-layer pre-activation variances");
            r = (*layer_r)[l];
        }
        if (act != ActivationId::identity)
            h = h.unaryExpr([act, r](double x) { return activation_eval(act, x, r); });
    }
    return h;
}

RidgeFit ridge_fit(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, double lambda) {
    if (lambda <= 0.0) throw numeric_error("ridge_fit: lambda must be > 0");
    if (y.size() != x.cols()) throw numeric_error("ridge_fit: label length != sample count");
    if (!x.allFinite() || !y.allFinite()) throw numeric_error("ridge_fit: non-finite inputs");
    const Eigen::Index p = x.rows();
    const Eigen::Index n = x.cols();
    const double pd = static_cast<double>(p);

    RidgeFit fit;
    fit.lambda = lambda;
    fit.n = n;
    const Eigen::VectorXd xy = x * y / std::sqrt(pd);

    if (p <= n) {
        Eigen::MatrixXd gram = x * x.transpose() / pd;
        gram.diagonal().array() += lambda;
        Eigen::LLT<Eigen::MatrixXd> llt(gram);
        if (llt.info() != Eigen::Success)
            throw numeric_error("ridge_fit: Cholesky failed on the primal Gram");
        fit.theta_hat = llt.solve(xy);
        // Diagnostics by power iteration (top) and inverse iteration (bottom).
        Eigen::VectorXd v = Eigen::VectorXd::Ones(p).normalized();
        for (int it = 0; it < 50; ++it) v = (gram * v).normalized();
        fit.gram_max_eig = v.dot(gram * v);
        Eigen::VectorXd u = Eigen::VectorXd::Ones(p).normalized();
        for (int it = 0; it < 50; ++it) u = llt.solve(u).normalized();
        fit.gram_min_eig = u.dot(gram * u);
    } else {
        Eigen::MatrixXd gram = x.transpose() * x / pd;
        gram.diagonal().array() += lambda;
        Eigen::LLT<Eigen::MatrixXd> llt(gram);
        if (llt.info() != Eigen::Success)
            throw numeric_error("ridge_fit: Cholesky failed on the dual Gram");
        fit.theta_hat = x * llt.solve(y) / std::sqrt(pd);
        Eigen::VectorXd v = Eigen::VectorXd::Ones(n).normalized();
        for (int it = 0; it < 50; ++it) v = (gram * v).normalized();
        fit.gram_max_eig = v.dot(gram * v);
        fit.gram_min_eig = lambda;  // p > n: XX^T/p is rank deficient
    }

    const Eigen::VectorXd resid =
        x * (x.transpose() * fit.theta_hat) / pd + lambda * fit.theta_hat - xy;
    fit.optimality_residual = resid.norm();
    fit.rhs_norm = xy.norm();
    if (fit.optimality_residual > 1e-8 * std::max(fit.rhs_norm, 1e-300) && fit.rhs_norm > 0.0)
        throw numeric_error("ridge_fit: optimality residual exceeds 1e-8 of the right-hand side");
    return fit;
}

double empirical_gen_error_analytic(const RidgeFit& fit, const CovarianceTriple& triple,
                                    const Eigen::VectorXd& theta_star) {
    const Eigen::Index p = triple.omega.rows();
    const Eigen::Index k = triple.psi.rows();
    if (fit.theta_hat.size() != p)
        throw numeric_error("empirical_gen_error_analytic: theta_hat dimension mismatch");
    if (theta_star.size() != k)
        throw numeric_error("empirical_gen_error_analytic: theta_star dimension mismatch");
    if (triple.phi.rows() != p || triple.phi.cols() != k)
        throw numeric_error("empirical_gen_error_analytic: phi dimension mismatch");
    const double kk = static_cast<double>(k);
    const double pp = static_cast<double>(p);
    const double target = theta_star.dot(triple.psi * theta_star) / kk;
    const double self = fit.theta_hat.dot(triple.omega * fit.theta_hat) / pp;
    const double overlap = fit.theta_hat.dot(triple.phi * theta_star) / std::sqrt(pp * kk);
    return target + self - 2.0 * overlap;
}

ReplicateSummary run_replicates(const ScenarioConfig& scenario, double alpha, int reps,
                                std::uint64_t master_seed, int threads) {
    if (reps < 2) throw numeric_error("run_replicates: need reps >= 2");
    if (alpha <= 0.0) throw numeric_error("run_replicates: alpha must be > 0");
    const Eigen::Index p = scenario.student.output_dim();
    const Eigen::Index k = scenario.teacher.output_dim();
    const Eigen::Index d = scenario.dimension;
    const Eigen::Index n = std::max<Eigen::Index>(
        1, static_cast<Eigen::Index>(std::llround(alpha * static_cast<double>(p))));

    const Eigen::MatrixXd omega0 =
        materialize_covariance(scenario.student.input_covariance, d, {});
    const Eigen::MatrixXd omega0_sqrt = covariance_sqrt(omega0);
    Eigen::MatrixXd noise_sqrt;
    if (scenario.noise_covariance) {
        Eigen::MatrixXd sigma = materialize_covariance(*scenario.noise_covariance, n, {});
        const double tr = sigma.trace() / static_cast<double>(n);
        if (std::abs(tr - scenario.noise_trace) > 1e-8 * std::max(1.0, scenario.noise_trace))
            throw config_error("run_replicates: noise_covariance trace != noise_trace");
        noise_sqrt = covariance_sqrt(sigma);
    }

    std::vector<ActivationId> student_acts, teacher_acts;
    for (const auto& l : scenario.student.layers) student_acts.push_back(l.activation);
    for (const auto& l : scenario.teacher.layers) teacher_acts.push_back(l.activation);

    ReplicateSummary summary;
    summary.empirical_values.resize(static_cast<std::size_t>(reps));
    summary.theory_values.resize(static_cast<std::size_t>(reps));

    parallel_for(reps, threads, [&](int rep) {
        const std::uint64_t idx = static_cast<std::uint64_t>(rep);
        try {
            SampledNetworkPair pair = sample_network_pair(
                scenario, derive_seed(master_seed, idx, seed_stream::weights));
            LinearizationResult lin =
                linearize_pair(pair.student_weights, scenario.student, pair.teacher_weights,
                               scenario.teacher, omega0);
            std::vector<double> student_r, teacher_r;
            for (const auto& kl : lin.ladder.student) student_r.push_back(kl.r);
            for (const auto& kl : lin.ladder.teacher) teacher_r.push_back(kl.r);

            StreamRng in_rng(derive_seed(master_seed, idx, seed_stream::train_inputs));
            Eigen::MatrixXd g(d, n);
            fill_gaussian(g, in_rng, 1.0);
            const Eigen::MatrixXd inputs = omega0_sqrt * g;

            const Eigen::MatrixXd x =
                forward_features(pair.student_weights, student_acts, inputs, &student_r);
            const Eigen::MatrixXd z =
                forward_features(pair.teacher_weights, teacher_acts, inputs, &teacher_r);

            Eigen::VectorXd y = z.transpose() * pair.theta_star / std::sqrt(static_cast<double>(k));
            if (scenario.noise_trace > 0.0) {
                StreamRng noise_rng(derive_seed(master_seed, idx, seed_stream::train_noise));
                Eigen::VectorXd eps(n);
                for (Eigen::Index i = 0; i < n; ++i) eps(i) = noise_rng.next_normal();
                if (noise_sqrt.size() > 0)
                    y += noise_sqrt * eps;
                else
                    y += std::sqrt(scenario.noise_trace) * eps;
            }

            RidgeFit fit = ridge_fit(x, y, scenario.ridge_lambda);
            summary.empirical_values[static_cast<std::size_t>(rep)] =
                empirical_gen_error_analytic(fit, lin.triple, pair.theta_star);

            SpectralContext ctx =
                build_spectral_context(lin.triple, pair.theta_star, n, scenario.noise_trace);
            summary.theory_values[static_cast<std::size_t>(rep)] =
                theory_gen_error(ctx, scenario.ridge_lambda).gen_error;
        } catch (const std::exception& e) {
            char buf[32];
            std::snprintf(buf, sizeof(buf), "%016llx",
                          static_cast<unsigned long long>(
                              derive_seed(master_seed, idx, seed_stream::weights)));
            throw numeric_error("replicate " + std::to_string(rep) + " (child seed 0x" + buf +
                                "): " + e.what());
        }
    });

    summary.empirical = aggregate(summary.empirical_values, master_seed);
    summary.theory = aggregate(summary.theory_values, master_seed);
    return summary;
}

JointGaussianSampler::JointGaussianSampler(const CovarianceTriple& triple) {
    p_ = triple.omega.rows();
    k_ = triple.psi.rows();
    Eigen::MatrixXd block(p_ + k_, p_ + k_);
    block.topLeftCorner(p_, p_) = triple.omega;
    block.topRightCorner(p_, k_) = triple.phi;
    block.bottomLeftCorner(k_, p_) = triple.phi.transpose();
    block.bottomRightCorner(k_, k_) = triple.psi;

    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(block);
    if (es.info() != Eigen::Success)
        throw numeric_error("sample_joint_gaussian_features: eigendecomposition failed");
    const double top = std::max(es.eigenvalues().maxCoeff(), 0.0);
    const double clip_tol = 1e-10 * std::max(top, 1.0);
    Eigen::VectorXd roots(p_ + k_);
    for (Eigen::Index i = 0; i < p_ + k_; ++i) {
        const double ev = es.eigenvalues()(i);
        if (ev < -clip_tol)
            throw numeric_error(
                "sample_joint_gaussian_features: joint block indefinite; most negative "
                "eigenvalue " +
                std::to_string(es.eigenvalues().minCoeff()));
        // Zero the whole tolerance band: sqrt of eigensolver noise would
        // otherwise leak ~1e-7 scale randomness into degenerate directions.
        roots(i) = ev <= clip_tol ? 0.0 : std::sqrt(ev);
    }
    loading_ = es.eigenvectors() * roots.asDiagonal();
}

std::pair<Eigen::MatrixXd, Eigen::MatrixXd> JointGaussianSampler::sample(
    Eigen::Index n, std::uint64_t seed) const {
    StreamRng rng(derive_seed(seed, 0, seed_stream::features));
    Eigen::MatrixXd g(p_ + k_, n);
    fill_gaussian(g, rng, 1.0);
    const Eigen::MatrixXd joint = loading_ * g;
    return {joint.topRows(p_), joint.bottomRows(k_)};
}

std::pair<Eigen::MatrixXd, Eigen::MatrixXd> sample_joint_gaussian_features(
    const CovarianceTriple& triple, Eigen::Index n, std::uint64_t seed) {
    return JointGaussianSampler(triple).sample(n, seed);
}

EmpiricalEstimate resolvent_functional_mc(McKind kind, const CovarianceTriple& triple,
                                          double lambda, const McObservables& obs,
                                          Eigen::Index n, int reps, std::uint64_t seed) {
    if (reps < 2) throw numeric_error("resolvent_functional_mc: need reps >= 2");
    const Eigen::Index p = triple.omega.rows();
    const Eigen::Index k = triple.psi.rows();
    const double pd = static_cast<double>(p);

    Eigen::MatrixXd m_det;
    if (kind == McKind::mp_law) {
        // Theta* is irrelevant here; only Omega enters M.
        SpectralContext ctx =
            build_spectral_context(triple, Eigen::VectorXd::Zero(k), n, 0.0);
        m_det = deterministic_equivalent_matrix(ctx, solve_m(ctx, lambda));
    }

    const JointGaussianSampler sampler(triple);
    std::vector<double> values(static_cast<std::size_t>(reps));
    for (int rep = 0; rep < reps; ++rep) {
        auto [x, z] = sampler.sample(
            n, derive_seed(seed, static_cast<std::uint64_t>(rep), seed_stream::oracle));
        Eigen::MatrixXd gram = x * x.transpose() / pd;
        gram.diagonal().array() += lambda;
        Eigen::LLT<Eigen::MatrixXd> llt(gram);
        if (llt.info() != Eigen::Success)
            throw numeric_error("resolvent_functional_mc: Cholesky failed");
        const Eigen::MatrixXd g = llt.solve(Eigen::MatrixXd::Identity(p, p));

        double val = 0.0;
        switch (kind) {
            case McKind::mp_law: {
                if (obs.a.rows() != p || obs.a.cols() != p)
                    throw numeric_error("mp_law observable must be p x p");
                val = std::abs(((g - m_det) * obs.a).trace() / pd);
                break;
            }
            case McKind::gxz: {
                if (obs.a.rows() != k || obs.a.cols() != p)
                    throw numeric_error("gxz observable must be k x p");
                const Eigen::MatrixXd gx = g * x;               // p x n
                const Eigen::MatrixXd za = z.transpose() * obs.a;  // n x p
                val = gx.cwiseProduct(za.transpose()).sum() / pd /
                      std::sqrt(static_cast<double>(k) * pd);
                break;
            }
            case McKind::gagb: {
                if (obs.a.rows() != p || obs.b.rows() != p)
                    throw numeric_error("gagb observables must be p x p");
                val = (obs.a * g * obs.b * g).trace() / pd;
                break;
            }
            case McKind::xgomgx: {
                if (obs.a.rows() != n || obs.a.cols() != n)
                    throw numeric_error("xgomgx observable must be n x n");
                const Eigen::MatrixXd gx = g * x;  // p x n
                const Eigen::MatrixXd t = gx.transpose() * (triple.omega * gx) / pd;  // n x n
                val = t.cwiseProduct(obs.a.transpose()).sum() / static_cast<double>(n);
                break;
            }
            case McKind::zxgomgxz: {
                if (obs.a.rows() != k || obs.a.cols() != k)
                    throw numeric_error("zxgomgxz observable must be k x k");
                const Eigen::MatrixXd j = (g * x) * z.transpose();  // p x k
                const Eigen::MatrixXd t =
                    j.transpose() * (triple.omega * j) / (static_cast<double>(k) * pd);  // k x k
                val = t.cwiseProduct(obs.a.transpose()).sum() / static_cast<double>(k);
                break;
            }
        }
        values[static_cast<std::size_t>(rep)] = val;
    }
    return aggregate(values, seed);
}

}  // namespace rainbow
