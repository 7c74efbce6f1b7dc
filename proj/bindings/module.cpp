// Python bindings for the main operations: quadrature moments, covariance
// materialization, linearization, the deterministic-equivalent solver and the
// Monte Carlo lab.

#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <nlohmann/json.hpp>

#include "rainbow/common.hpp"
#include "rainbow/equivalents.hpp"
#include "rainbow/gauss_hermite.hpp"
#include "rainbow/lab.hpp"
#include "rainbow/matrix_io.hpp"
#include "rainbow/presets.hpp"
#include "rainbow/sweep.hpp"
#include "rainbow/verify.hpp"

namespace py = pybind11;
using namespace rainbow;

namespace {

ActivationId act_from(const std::string& name) { return activation_from_name(name); }

ScenarioConfig scenario_from_any(const std::string& source) {
    if (is_preset(source)) return preset_scenario(source);
    return load_scenario(source);
}

py::dict solution_dict(const SelfConsistentSolution& sol) {
    py::dict d;
    d["m"] = sol.m;
    d["lambda"] = sol.lambda;
    d["residual"] = sol.residual;
    d["lambda_m"] = sol.lambda_m;
    d["omega_m_omega_m"] = sol.omega_m_omega_m;
    d["d_denom"] = sol.d_denom;
    return d;
}

}  // namespace

PYBIND11_MODULE(_rainbow, m) {
    m.doc() = "Asymptotic ridge-regression error for structured random-feature networks";
    m.attr("__version__") = kVersion;

    m.def("gauss_hermite", [](int order) {
        const QuadratureRule& rule = gauss_hermite(order);
        return py::make_tuple(rule.nodes, rule.weights);
    });
    m.def("kappa1", [](const std::string& act, double r) { return kappa1(act_from(act), r); });
    m.def("second_moment",
          [](const std::string& act, double r) { return second_moment(act_from(act), r); });
    m.def("cross_moment", [](const std::string& a, const std::string& b, double ra, double rb,
                             double rc) {
        return cross_moment(act_from(a), act_from(b), ra, rb, rc);
    });

    m.def("materialize_covariance", [](const std::string& spec_json, Eigen::Index dim) {
        nlohmann::json j = nlohmann::json::parse(spec_json);
        // Reuse the scenario loader's covariance parser through a scenario stub.
        nlohmann::json stub = {
            {"dimension", static_cast<int>(dim)},
            {"ridge_lambda", 1.0},
            {"sample_ratios", {1.0}},
            {"replicates", 2},
            {"master_seed", 0},
            {"input_covariance", j},
            {"teacher",
             {{"layers",
               {{{"width", "dim"},
                 {"activation", "identity"},
                 {"weight_rule", {{"kind", "fresh_gaussian"}, {"cov", {{"kind", "identity"}}}}}}}},
              {"readout", {{"kind", "iid_gaussian"}, {"variance", 1.0}}}}},
            {"student",
             {{"layers",
               {{{"width", "dim"},
                 {"activation", "identity"},
                 {"weight_rule",
                  {{"kind", "fresh_gaussian"}, {"cov", {{"kind", "identity"}}}}}}}}}}};
        ScenarioConfig cfg = scenario_from_json(stub);
        return materialize_covariance(cfg.student.input_covariance, dim, {});
    });

    m.def("write_matrix", &write_matrix);
    m.def("read_matrix", &read_matrix);

    m.def("preset_names", &preset_names);
    m.def("preset_json",
          [](const std::string& name) { return scenario_to_json(preset_scenario(name)).dump(2); });

    py::class_<CovarianceTriple>(m, "CovarianceTriple")
        .def(py::init<>())
        .def_readwrite("omega", &CovarianceTriple::omega)
        .def_readwrite("psi", &CovarianceTriple::psi)
        .def_readwrite("phi", &CovarianceTriple::phi);

    py::class_<SpectralContext>(m, "SpectralContext")
        .def(py::init([](const CovarianceTriple& triple, const Eigen::VectorXd& theta,
                         Eigen::Index n, double noise_trace) {
                 return build_spectral_context(triple, theta, n, noise_trace);
             }),
             py::arg("triple"), py::arg("theta_star"), py::arg("n"), py::arg("noise_trace") = 0.0)
        .def("with_samples", [](const SpectralContext& ctx, Eigen::Index n) {
            return with_samples(ctx, n);
        })
        .def("solve_m",
             [](const SpectralContext& ctx, double lam) { return solution_dict(solve_m(ctx, lam)); })
        .def("gen_error", [](const SpectralContext& ctx, double lam) {
            TheoryPrediction pred = theory_gen_error(ctx, lam);
            py::dict d;
            d["gen_error"] = pred.gen_error;
            d["bias_term"] = pred.bias_term;
            d["noise_term"] = pred.noise_term;
            d["m"] = pred.solution.m;
            d["negative_bias_warning"] = pred.negative_bias_warning;
            return d;
        });

    m.def("linearize_scenario", [](const std::string& source, std::uint64_t seed) {
        ScenarioConfig cfg = scenario_from_any(source);
        const Eigen::MatrixXd omega0 =
            materialize_covariance(cfg.student.input_covariance, cfg.dimension, {});
        SampledNetworkPair pair = sample_network_pair(cfg, seed);
        LinearizationResult lin = linearize_pair(pair.student_weights, cfg.student,
                                                 pair.teacher_weights, cfg.teacher, omega0);
        py::dict d;
        d["omega"] = lin.triple.omega;
        d["psi"] = lin.triple.psi;
        d["phi"] = lin.triple.phi;
        d["theta_star"] = pair.theta_star;
        py::list student, teacher;
        for (const auto& k : lin.ladder.student) {
            py::dict kd;
            kd["kappa1"] = k.kappa1;
            kd["kappa_star_sq"] = k.kappa_star_sq;
            kd["r"] = k.r;
            student.append(kd);
        }
        for (const auto& k : lin.ladder.teacher) {
            py::dict kd;
            kd["kappa1"] = k.kappa1;
            kd["kappa_star_sq"] = k.kappa_star_sq;
            kd["r"] = k.r;
            teacher.append(kd);
        }
        d["student_kappas"] = student;
        d["teacher_kappas"] = teacher;
        return d;
    });

    m.def("ridge_fit", [](const Eigen::MatrixXd& x, const Eigen::VectorXd& y, double lam) {
        RidgeFit fit = ridge_fit(x, y, lam);
        py::dict d;
        d["theta_hat"] = fit.theta_hat;
        d["optimality_residual"] = fit.optimality_residual;
        d["gram_min_eig"] = fit.gram_min_eig;
        d["gram_max_eig"] = fit.gram_max_eig;
        return d;
    });

    m.def(
        "run_replicates",
        [](const std::string& source, double alpha, int reps, std::uint64_t seed, int threads) {
            ScenarioConfig cfg = scenario_from_any(source);
            ReplicateSummary s = run_replicates(cfg, alpha, reps, seed, threads);
            py::dict d;
            d["emp_mean"] = s.empirical.mean;
            d["emp_stderr"] = s.empirical.stderr_of_mean;
            d["theory_mean"] = s.theory.mean;
            d["theory_stderr"] = s.theory.stderr_of_mean;
            d["reps"] = s.empirical.reps;
            return d;
        },
        py::arg("scenario"), py::arg("alpha"), py::arg("reps"), py::arg("seed"),
        py::arg("threads") = 1);

    m.def(
        "sweep",
        [](const std::string& source, bool simulate, int threads, std::optional<int> dim,
           std::optional<int> reps) {
            ScenarioConfig cfg = scenario_from_any(source);
            if (dim) {
                cfg.dimension = *dim;
                cfg.teacher.input_dim = *dim;
                cfg.student.input_dim = *dim;
                for (auto& l : cfg.teacher.layers)
                    if (l.width_is_dim) l.width = *dim;
                for (auto& l : cfg.student.layers)
                    if (l.width_is_dim) l.width = *dim;
            }
            if (reps) cfg.replicates = *reps;
            SweepOptions opts;
            opts.simulate = simulate;
            opts.threads = threads;
            SweepResult result = run_sweep(cfg, opts);
            py::list rows;
            for (const auto& row : result.rows) {
                py::dict r;
                r["alpha"] = row.alpha;
                r["lambda"] = row.lambda;
                r["theory_gen_error"] = row.theory_gen_error;
                r["emp_mean"] = row.emp_mean;
                r["emp_stderr"] = row.emp_stderr;
                r["reps"] = row.reps;
                r["status"] = row.status;
                rows.append(r);
            }
            return rows;
        },
        py::arg("scenario"), py::arg("simulate") = false, py::arg("threads") = 1,
        py::arg("dim") = std::nullopt, py::arg("reps") = std::nullopt);

    py::register_exception<config_error>(m, "ConfigError");
    py::register_exception<io_error>(m, "IoError");
    py::register_exception<numeric_error>(m, "NumericError");
}
