// Acceptance suite: one pass/fail line per criterion. Exit 0 iff every
// criterion that ran passed. --only N restricts to a single criterion.

#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "rainbow/common.hpp"
#include "rainbow/equivalents.hpp"
#include "rainbow/lab.hpp"
#include "rainbow/linearization.hpp"
#include "rainbow/presets.hpp"
#include "rainbow/verify.hpp"

using namespace rainbow;

namespace {

namespace fs = std::filesystem;

ScenarioConfig desk_scale(const char* preset, int dim, int reps) {
    ScenarioConfig cfg = preset_scenario(preset);
    cfg.dimension = dim;
    cfg.teacher.input_dim = dim;
    cfg.student.input_dim = dim;
    for (auto& l : cfg.teacher.layers)
        if (l.width_is_dim) l.width = dim;
    for (auto& l : cfg.student.layers)
        if (l.width_is_dim) l.width = dim;
    cfg.replicates = reps;
    return cfg;
}

bool battery_rows(const std::vector<std::string>& names, std::string& detail, int threads) {
    bool pass = true;
    std::ostringstream out;
    for (const auto& name : names) {
        VerifyOptions opts;
        opts.only = name;
        opts.threads = threads;
        const std::vector<CheckResult> results = run_verification_battery(opts);
        for (const auto& r : results) {
            pass = pass && r.pass;
            out << r.name << (r.pass ? " ok" : " FAILED (" + r.detail + ")") << "; ";
        }
    }
    detail = out.str();
    return pass;
}

// Criterion 1: Fig.1 reproduction at desk scale. Theory within 3 stderr of
// the empirical mean at every grid point, and within 5% relative at the
// larger sample ratios.
bool criterion_1(std::string& detail) {
    const int threads = 4;
    std::ostringstream out;
    bool pass = true;
    for (const char* preset : {"fig1-gamma0.0", "fig1-gamma0.5"}) {
        ScenarioConfig cfg = desk_scale(preset, 300, 40);
        for (double alpha : {0.5, 1.0, 2.0, 3.0}) {
            ReplicateSummary s =
                run_replicates(cfg, alpha, cfg.replicates, cfg.master_seed, threads);
            const double gap = std::abs(s.empirical.mean - s.theory.mean);
            const bool within_3se = gap <= 3.0 * s.empirical.stderr_of_mean;
            bool within_rel = true;
            if (alpha >= 2.0) within_rel = gap <= 0.05 * std::abs(s.theory.mean);
            out << preset << " a=" << alpha << ": emp=" << s.empirical.mean
                << " th=" << s.theory.mean << " se=" << s.empirical.stderr_of_mean
                << (within_3se && within_rel ? "" : " <-- FAIL") << "; ";
            pass = pass && within_3se && within_rel;
        }
    }
    detail = out.str();
    return pass;
}

bool criterion_2(std::string& detail) {
    return battery_rows({"m-closed-form", "m-bounds"}, detail, 1);
}

bool criterion_3(std::string& detail) { return battery_rows({"mp-scaling"}, detail, 1); }

bool criterion_4(std::string& detail) {
    return battery_rows({"prop1-gxz", "prop1-gagb", "prop1-xgomgx", "prop1-zxgomgxz"}, detail, 1);
}

bool criterion_5(std::string& detail) {
    return battery_rows({"linearization-decay"}, detail, 1);
}

bool criterion_6(std::string& detail) {
    return battery_rows({"kappa-closed", "kappa-mc", "kappa-doubling"}, detail, 1);
}

bool criterion_7(std::string& detail) { return battery_rows({"ridge"}, detail, 1); }

bool criterion_8(std::string& detail) { return battery_rows({"null-predictor"}, detail, 4); }

// Criterion 9: effective-network identity at d = 300.
bool criterion_9(std::string& detail) {
    const int d = 300;
    ScenarioConfig cfg = desk_scale("fig1-gamma0.5", d, 2);
    SampledNetworkPair pair = sample_network_pair(cfg, 321);
    const Eigen::MatrixXd omega0 = materialize_covariance(cfg.student.input_covariance, d, {});
    LinearizationResult lin = linearize_pair(pair.student_weights, cfg.student,
                                             pair.teacher_weights, cfg.teacher, omega0);
    EffectiveLinearNet net = effective_linear_net(pair.student_weights, lin.ladder.student);
    const Eigen::MatrixXd rebuilt = net.w_eff * omega0 * net.w_eff.transpose() + net.c_eff;
    const double rel = (rebuilt - lin.triple.omega).norm() / lin.triple.omega.norm();
    std::ostringstream out;
    out << "relative Frobenius gap " << rel;
    detail = out.str();
    return rel <= 1e-8;
}

// Criterion 10: sweep determinism, byte-identical CSV at 1 and 8 threads.
bool criterion_10(std::string& detail) {
    const char* cli = std::getenv("RAINBOW_CLI");
    std::string cli_path = cli != nullptr ? cli : RAINBOW_CLI_PATH;
    fs::path dir = fs::temp_directory_path() / "rainbow_acceptance_c10";
    fs::remove_all(dir);
    fs::create_directories(dir / "a");
    fs::create_directories(dir / "b");
    const std::string base = cli_path +
                             " sweep --preset fig1-gamma0.5 --dim 120 --reps 8 --simulate ";
    auto run = [&](const std::string& extra) {
        const std::string cmd = base + extra + " >/dev/null 2>&1";
        return WEXITSTATUS(std::system(cmd.c_str()));
    };
    if (run("--threads 1 --out " + (dir / "a").string()) != 0) {
        detail = "single-thread sweep failed";
        return false;
    }
    if (run("--threads 8 --out " + (dir / "b").string()) != 0) {
        detail = "8-thread sweep failed";
        return false;
    }
    auto slurp = [](const fs::path& p) {
        std::ifstream in(p, std::ios::binary);
        std::ostringstream ss;
        ss << in.rdbuf();
        return ss.str();
    };
    const std::string a = slurp(dir / "a" / "fig1-gamma0.5_sweep.csv");
    const std::string b = slurp(dir / "b" / "fig1-gamma0.5_sweep.csv");
    if (a.empty() || a != b) {
        detail = "CSV outputs differ between thread counts";
        return false;
    }
    // Rerun with the same scenario and seed: still identical.
    fs::create_directories(dir / "c");
    if (run("--threads 8 --out " + (dir / "c").string()) != 0) {
        detail = "rerun failed";
        return false;
    }
    if (slurp(dir / "c" / "fig1-gamma0.5_sweep.csv") != a) {
        detail = "rerun produced different bytes";
        return false;
    }
    detail = "byte-identical across 1/8 threads and reruns";
    return true;
}

struct Criterion {
    int id;
    const char* label;
    bool (*fn)(std::string&);
};

const Criterion kCriteria[] = {
    {1, "theory vs simulation, fig1 presets at desk scale", criterion_1},
    {2, "self-consistent solver closed forms and bounds", criterion_2},
    {3, "anisotropic resolvent law scaling", criterion_3},
    {4, "multi-resolvent equivalents vs monte carlo", criterion_4},
    {5, "linearization decay across dimensions", criterion_5},
    {6, "kappa coefficient oracles", criterion_6},
    {7, "ridge solver residual and primal/dual agreement", criterion_7},
    {8, "null-predictor limit", criterion_8},
    {9, "effective linear network identity", criterion_9},
    {10, "sweep determinism across thread counts", criterion_10},
};

}  // namespace

int main(int argc, char** argv) {
    int only = 0;
    for (int i = 1; i + 1 < argc; ++i)
        if (std::strcmp(argv[i], "--only") == 0) only = std::atoi(argv[i + 1]);

    bool all_pass = true;
    for (const auto& criterion : kCriteria) {
        if (only != 0 && criterion.id != only) continue;
        std::string detail;
        bool pass = false;
        try {
            pass = criterion.fn(detail);
        } catch (const std::exception& e) {
            detail = std::string("exception: ") + e.what();
        }
        all_pass = all_pass && pass;
        std::printf("[%s] criterion %d: %s — %s\n", pass ? "PASS" : "FAIL", criterion.id,
                    criterion.label, detail.c_str());
        std::fflush(stdout);
    }
    return all_pass ? 0 : 1;
}
