// rainbow: asymptotic ridge-regression error for structured random-feature
// networks, with a Monte Carlo lab to verify every prediction.

#include <CLI11.hpp>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

#include <nlohmann/json.hpp>

#include "rainbow/common.hpp"
#include "rainbow/equivalents.hpp"
#include "rainbow/lab.hpp"
#include "rainbow/matrix_io.hpp"
#include "rainbow/presets.hpp"
#include "rainbow/sweep.hpp"
#include "rainbow/verify.hpp"

namespace {

using namespace rainbow;

struct CommonArgs {
    std::string scenario_path;
    std::string preset;
    std::string gamma;
    std::string out_dir = ".";
    std::string format = "csv";
    std::optional<std::uint64_t> seed;
    std::optional<int> dim;
    std::optional<int> reps;
    int threads = 0;  // 0 -> env or 1
};

void add_common(CLI::App* cmd, CommonArgs& args, bool with_sim_knobs) {
    cmd->add_option("--scenario", args.scenario_path, "Scenario JSON file");
    cmd->add_option("--preset", args.preset,
                    "Built-in preset name (e.g. fig1-gamma0.5, or fig1 with --gamma)");
    cmd->add_option("--gamma", args.gamma, "Power-law decay for --preset fig1");
    cmd->add_option("--out", args.out_dir, "Output directory");
    cmd->add_option("--format", args.format, "Output format: csv or json")
        ->check(CLI::IsMember({"csv", "json"}));
    cmd->add_option("--seed", args.seed, "Master seed override");
    cmd->add_option("--dim", args.dim, "Dimension override (desk-scale runs)");
    if (with_sim_knobs) {
        cmd->add_option("--reps", args.reps, "Replicate count override");
        cmd->add_option("--threads", args.threads,
                        "Worker threads (env RAINBOW_THREADS is the fallback)");
    }
}

int effective_threads(int flag_value) {
    if (flag_value > 0) return flag_value;
    if (const char* env = std::getenv("RAINBOW_THREADS")) {
        const int v = std::atoi(env);
        if (v > 0) return v;
    }
    return 1;
}

ScenarioConfig resolve_scenario(const CommonArgs& args) {
    if (args.scenario_path.empty() == args.preset.empty())
        throw CLI::ValidationError("provide exactly one of --scenario or --preset");
    LoadOptions opts;
    opts.dim_override = args.dim;
    opts.replicates_override = args.reps;
    opts.seed_override = args.seed;
    if (!args.scenario_path.empty()) return load_scenario(args.scenario_path, opts);

    std::string name = args.preset;
    if (!args.gamma.empty()) {
        if (name != "fig1")
            throw CLI::ValidationError("--gamma is only meaningful with --preset fig1");
        name = "fig1-gamma" + args.gamma;
    }
    if (!is_preset(name)) throw CLI::ValidationError("unknown preset '" + name + "'");
    ScenarioConfig cfg = preset_scenario(name);
    if (args.dim) {
        cfg.dimension = *args.dim;
        cfg.teacher.input_dim = *args.dim;
        cfg.student.input_dim = *args.dim;
        for (auto& l : cfg.teacher.layers)
            if (l.width_is_dim) l.width = *args.dim;
        for (auto& l : cfg.student.layers)
            if (l.width_is_dim) l.width = *args.dim;
    }
    if (args.reps) cfg.replicates = *args.reps;
    if (args.seed) cfg.master_seed = *args.seed;
    return cfg;
}

void write_text(const std::string& path, const std::string& content) {
    std::ofstream out(path, std::ios::trunc | std::ios::binary);
    if (!out) throw io_error("cannot open " + path);
    out << content;
}

std::string out_path(const CommonArgs& args, const ScenarioConfig& cfg, const char* suffix) {
    std::filesystem::create_directories(args.out_dir);
    const std::string base = cfg.name.empty() ? "scenario" : cfg.name;
    return (std::filesystem::path(args.out_dir) / (base + suffix)).string();
}

int run_grid_command(const CommonArgs& args, bool simulate, const char* csv_suffix,
                     std::string (*render)(const SweepResult&)) {
    ScenarioConfig cfg = resolve_scenario(args);
    SweepOptions opts;
    opts.simulate = simulate;
    opts.threads = effective_threads(args.threads);
    SweepResult result = run_sweep(cfg, opts);

    const bool json_format = args.format == "json";
    std::string suffix = csv_suffix;
    if (json_format) suffix = suffix.substr(0, suffix.size() - 4) + ".json";
    const std::string data_path = out_path(args, cfg, suffix.c_str());
    write_text(data_path, json_format ? sweep_rows_json(result) : render(result));
    const std::string manifest_path = out_path(args, cfg, "_manifest.json");
    write_text(manifest_path, sweep_manifest_json(result));

    bool all_ok = true;
    for (const auto& row : result.rows) {
        if (row.status != "ok") {
            all_ok = false;
            std::cerr << "grid point alpha=" << row.alpha << " failed: " << row.error << "\n";
        }
    }
    std::cout << data_path << "\n" << manifest_path << "\n";
    return all_ok ? 0 : 1;
}

int cmd_linearize(const std::string& weights_dir, const std::string& scenario_path,
                  const std::string& out_dir, std::optional<int> dim) {
    LoadOptions lopts;
    lopts.dim_override = dim;
    ScenarioConfig cfg = load_scenario(scenario_path, lopts);

    auto load_stack = [&](const char* role, int depth) {
        std::vector<Eigen::MatrixXd> stack;
        for (int l = 1; l <= depth; ++l) {
            const std::string path = (std::filesystem::path(weights_dir) /
                                      (std::string(role) + "_" + std::to_string(l) + ".rbm"))
                                         .string();
            if (!std::filesystem::exists(path))
                throw io_error("linearize: missing layer file " + path);
            stack.push_back(read_matrix(path));
        }
        return stack;
    };
    const std::vector<Eigen::MatrixXd> student_w = load_stack("student", cfg.student.depth());
    const std::vector<Eigen::MatrixXd> teacher_w = load_stack("teacher", cfg.teacher.depth());

    const Eigen::MatrixXd omega0 =
        materialize_covariance(cfg.student.input_covariance, cfg.dimension, {});
    LinearizationResult lin =
        linearize_pair(student_w, cfg.student, teacher_w, cfg.teacher, omega0);
    EffectiveLinearNet net = effective_linear_net(student_w, lin.ladder.student);

    std::filesystem::create_directories(out_dir);
    auto emit = [&](const char* name, const Eigen::MatrixXd& m) {
        write_matrix(m, (std::filesystem::path(out_dir) / name).string());
    };
    emit("omega_lin.rbm", lin.triple.omega);
    emit("psi_lin.rbm", lin.triple.psi);
    emit("phi_lin.rbm", lin.triple.phi);
    emit("w_eff.rbm", net.w_eff);
    emit("c_eff.rbm", net.c_eff);

    nlohmann::json ladder;
    auto layer_json = [](const KappaLayer& k) {
        return nlohmann::json{{"kappa1", k.kappa1}, {"kappa_star_sq", k.kappa_star_sq}, {"r", k.r}};
    };
    for (const auto& k : lin.ladder.student) ladder["student"].push_back(layer_json(k));
    for (const auto& k : lin.ladder.teacher) ladder["teacher"].push_back(layer_json(k));
    for (const auto& c : lin.ladder.cross)
        ladder["cross"].push_back(nlohmann::json{{"kappa1_student", c.kappa1_a},
                                                 {"kappa1_teacher", c.kappa1_b},
                                                 {"cross_sq", c.cross_sq},
                                                 {"r_student", c.r_a},
                                                 {"r_teacher", c.r_b},
                                                 {"r_cross", c.r_cross}});
    ladder["student_cov_provenance"] = lin.ladder.student_cov_provenance;
    ladder["teacher_cov_provenance"] = lin.ladder.teacher_cov_provenance;
    char hash_buf[32];
    std::snprintf(hash_buf, sizeof(hash_buf), "%016llx",
                  static_cast<unsigned long long>(scenario_hash(cfg)));
    ladder["scenario_hash"] = hash_buf;
    ladder["version"] = kVersion;
    write_text((std::filesystem::path(out_dir) / "kappa_ladder.json").string(),
               ladder.dump(2) + "\n");
    std::cout << out_dir << "\n";
    return 0;
}

int cmd_verify(const std::optional<std::string>& only, int threads, std::uint64_t seed,
               bool inject) {
    VerifyOptions opts;
    opts.only = only;
    opts.threads = threads;
    opts.seed = seed;
    opts.inject_sign_error = inject;
    const std::vector<CheckResult> results = run_verification_battery(opts);
    bool all_pass = true;
    std::printf("%-22s %-6s %8s  %s\n", "check", "status", "seconds", "detail");
    for (const auto& r : results) {
        all_pass = all_pass && r.pass;
        std::printf("%-22s %-6s %8.2f  %s\n", r.name.c_str(), r.pass ? "PASS" : "FAIL",
                    r.seconds, r.detail.c_str());
    }
    return all_pass ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Asymptotic test error of ridge regression on structured random-feature "
                 "networks, with a Monte Carlo verification lab"};
    app.require_subcommand(1);
    app.set_version_flag("--version", std::string(kVersion));

    CommonArgs theory_args, sim_args, sweep_args;
    bool sweep_simulate = true;

    CLI::App* theory = app.add_subcommand("theory", "Asymptotic predictions over the alpha grid");
    add_common(theory, theory_args, false);

    CLI::App* simulate = app.add_subcommand("simulate", "Monte Carlo replicates over the grid");
    add_common(simulate, sim_args, true);

    CLI::App* sweep = app.add_subcommand("sweep", "Theory and simulation side by side");
    add_common(sweep, sweep_args, true);
    sweep->add_flag("--simulate,!--no-simulate", sweep_simulate,
                    "Run the Monte Carlo lab next to the theory column");

    std::string lin_weights, lin_scenario, lin_out = ".";
    std::optional<int> lin_dim;
    CLI::App* linearize = app.add_subcommand(
        "linearize", "Covariance linearization of ingested weight matrices");
    linearize->add_option("--weights-dir", lin_weights, "Directory with student_i.rbm / teacher_i.rbm")
        ->required();
    linearize->add_option("--scenario", lin_scenario, "Scenario JSON file")->required();
    linearize->add_option("--out", lin_out, "Output directory");
    linearize->add_option("--dim", lin_dim, "Dimension override");

    std::optional<std::string> verify_only;
    int verify_threads = 0;
    std::uint64_t verify_seed = 8675309;
    bool verify_inject = false;
    CLI::App* verify = app.add_subcommand("verify-equivalents",
                                          "Run the oracle battery and print a pass/fail table");
    verify->add_option("--only", verify_only, "Run a single named check");
    verify->add_option("--threads", verify_threads, "Worker threads");
    verify->add_option("--seed", verify_seed, "Battery seed");
    verify->add_flag("--inject-sign-error", verify_inject)->group("");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForVersion& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    try {
        if (theory->parsed())
            return run_grid_command(theory_args, false, "_theory.csv", theory_csv);
        if (simulate->parsed())
            return run_grid_command(sim_args, true, "_simulate.csv", simulate_csv);
        if (sweep->parsed())
            return run_grid_command(sweep_args, sweep_simulate, "_sweep.csv", sweep_csv);
        if (linearize->parsed()) return cmd_linearize(lin_weights, lin_scenario, lin_out, lin_dim);
        if (verify->parsed())
            return cmd_verify(verify_only, effective_threads(verify_threads), verify_seed,
                              verify_inject);
    } catch (const CLI::ValidationError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const config_error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 2;
}
