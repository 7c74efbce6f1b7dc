#include "rainbow/sweep.hpp"

#include <chrono>
#include <cstdio>
#include <sstream>

#include <nlohmann/json.hpp>

#include "rainbow/common.hpp"

namespace rainbow {

namespace {

using clock_type = std::chrono::steady_clock;

double seconds_since(clock_type::time_point t0) {
    return std::chrono::duration<double>(clock_type::now() - t0).count();
}

}  // namespace

std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

SweepResult run_sweep(const ScenarioConfig& scenario, const SweepOptions& opts) {
    SweepResult result;
    result.scenario_hash = scenario_hash(scenario);
    result.master_seed = scenario.master_seed;
    result.scenario_name = scenario.name;
    result.dimension = scenario.dimension;
    result.simulated = opts.simulate;
    result.version = kVersion;

    const std::vector<double> alphas = opts.alphas ? *opts.alphas : scenario.sample_ratios;
    const int reps = opts.reps ? *opts.reps : scenario.replicates;
    const double lambda = scenario.ridge_lambda;

    // Prototype realization for theory-only runs: one network pair drawn from
    // the master seed, shared across the alpha grid via the spectral context.
    std::optional<SpectralContext> proto_ctx;
    if (!opts.simulate) {
        const Eigen::MatrixXd omega0 =
            materialize_covariance(scenario.student.input_covariance, scenario.dimension, {});
        SampledNetworkPair pair = sample_network_pair(
            scenario, derive_seed(scenario.master_seed, 0, seed_stream::prototype));
        LinearizationResult lin = linearize_pair(pair.student_weights, scenario.student,
                                                 pair.teacher_weights, scenario.teacher, omega0);
        proto_ctx = build_spectral_context(lin.triple, pair.theta_star, 1, scenario.noise_trace);
    }

    for (double alpha : alphas) {
        SweepRow row;
        row.alpha = alpha;
        row.lambda = lambda;
        const auto t0 = clock_type::now();
        try {
            if (opts.simulate) {
                ReplicateSummary summary =
                    run_replicates(scenario, alpha, reps, scenario.master_seed, opts.threads);
                row.theory_gen_error = summary.theory.mean;
                row.emp_mean = summary.empirical.mean;
                row.emp_stderr = summary.empirical.stderr_of_mean;
                row.reps = summary.empirical.reps;
                // m and the split come from the prediction at the mean level;
                // recompute cheaply on the first replicate's seed path is not
                // needed for the CSV, leave bias/noise zero in paired mode.
                row.theory_bias = 0.0;
                row.theory_noise = 0.0;
                row.m = 0.0;
            } else {
                const Eigen::Index p = scenario.student.output_dim();
                const Eigen::Index n = std::max<Eigen::Index>(
                    1, static_cast<Eigen::Index>(std::llround(alpha * static_cast<double>(p))));
                TheoryPrediction pred = theory_gen_error(with_samples(*proto_ctx, n), lambda);
                row.theory_gen_error = pred.gen_error;
                row.theory_bias = pred.bias_term;
                row.theory_noise = pred.noise_term;
                row.m = pred.solution.m;
                row.reps = 0;
                if (pred.negative_bias_warning)
                    row.warning = "theta*-quadratic form negative beyond -1e-8";
            }
        } catch (const std::exception& e) {
            row.status = "error";
            row.error = e.what();
        }
        row.wall_seconds = seconds_since(t0);
        result.rows.push_back(std::move(row));
    }
    return result;
}

std::string sweep_csv(const SweepResult& result) {
    std::ostringstream out;
    out << "alpha,lambda,theory_gen_error,emp_mean,emp_stderr,reps\n";
    for (const auto& row : result.rows) {
        if (row.status != "ok") continue;
        out << format_double(row.alpha) << ',' << format_double(row.lambda) << ','
            << format_double(row.theory_gen_error) << ',' << format_double(row.emp_mean) << ','
            << format_double(row.emp_stderr) << ',' << row.reps << '\n';
    }
    return out.str();
}

std::string theory_csv(const SweepResult& result) {
    std::ostringstream out;
    out << "alpha,lambda,m,bias_term,noise_term,gen_error\n";
    for (const auto& row : result.rows) {
        if (row.status != "ok") continue;
        out << format_double(row.alpha) << ',' << format_double(row.lambda) << ','
            << format_double(row.m) << ',' << format_double(row.theory_bias) << ','
            << format_double(row.theory_noise) << ',' << format_double(row.theory_gen_error)
            << '\n';
    }
    return out.str();
}

std::string simulate_csv(const SweepResult& result) {
    std::ostringstream out;
    out << "alpha,emp_mean,emp_stderr,reps,seed\n";
    for (const auto& row : result.rows) {
        if (row.status != "ok") continue;
        out << format_double(row.alpha) << ',' << format_double(row.emp_mean) << ','
            << format_double(row.emp_stderr) << ',' << row.reps << ',' << result.master_seed
            << '\n';
    }
    return out.str();
}

std::string sweep_manifest_json(const SweepResult& result) {
    nlohmann::json j;
    j["version"] = result.version;
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%016llx",
                  static_cast<unsigned long long>(result.scenario_hash));
    j["scenario_hash"] = buf;
    j["scenario_name"] = result.scenario_name;
    j["master_seed"] = result.master_seed;
    j["dimension"] = result.dimension;
    j["simulated"] = result.simulated;
    j["theory_mode"] = result.simulated ? "replicate_paired" : "prototype";
    nlohmann::json grid = nlohmann::json::array();
    for (const auto& row : result.rows) {
        nlohmann::json pt;
        pt["alpha"] = row.alpha;
        pt["lambda"] = row.lambda;
        pt["status"] = row.status;
        pt["wall_seconds"] = row.wall_seconds;
        if (!row.error.empty()) pt["error"] = row.error;
        if (!row.warning.empty()) pt["warning"] = row.warning;
        grid.push_back(std::move(pt));
    }
    j["grid"] = std::move(grid);
    return j.dump(2);
}

std::string sweep_rows_json(const SweepResult& result) {
    nlohmann::json rows = nlohmann::json::array();
    for (const auto& row : result.rows) {
        if (row.status != "ok") continue;
        nlohmann::json r;
        r["alpha"] = row.alpha;
        r["lambda"] = row.lambda;
        r["theory_gen_error"] = row.theory_gen_error;
        r["emp_mean"] = row.emp_mean;
        r["emp_stderr"] = row.emp_stderr;
        r["reps"] = row.reps;
        rows.push_back(std::move(r));
    }
    return rows.dump(2);
}

}  // namespace rainbow
