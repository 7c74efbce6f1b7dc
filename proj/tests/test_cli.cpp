#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "rainbow/common.hpp"
#include "rainbow/lab.hpp"
#include "rainbow/linearization.hpp"
#include "rainbow/matrix_io.hpp"
#include "rainbow/presets.hpp"

using namespace rainbow;

namespace {

namespace fs = std::filesystem;

int run_cli(const std::string& args) {
    const std::string cmd = std::string(RAINBOW_CLI_PATH) + " " + args + " >/dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    return WEXITSTATUS(status);
}

fs::path fresh_dir(const char* name) {
    fs::path dir = fs::temp_directory_path() / "rainbow_cli_tests" / name;
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

std::string slurp(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

}  // namespace

TEST_CASE("unknown preset exits with usage code 2 and writes nothing") {
    fs::path dir = fresh_dir("unknown_preset");
    CHECK(run_cli("sweep --preset not-a-preset --out " + dir.string()) == 2);
    CHECK(fs::is_empty(dir));
}

TEST_CASE("missing scenario and preset is a usage error") {
    CHECK(run_cli("theory") == 2);
    CHECK(run_cli("sweep --scenario a.json --preset lab-small") == 2);
}

TEST_CASE("theory-only sweep runs in seconds and writes csv plus manifest") {
    fs::path dir = fresh_dir("theory_only");
    CHECK(run_cli("sweep --preset lab-small --dim 60 --no-simulate --out " + dir.string()) == 0);
    CHECK(fs::exists(dir / "lab-small_sweep.csv"));
    CHECK(fs::exists(dir / "lab-small_manifest.json"));
    const std::string csv = slurp(dir / "lab-small_sweep.csv");
    CHECK(csv.rfind("alpha,lambda,theory_gen_error,emp_mean,emp_stderr,reps\n", 0) == 0);
    // Three grid points (header + 3 lines).
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 4);
}

TEST_CASE("gamma flag resolves the fig1 family") {
    fs::path dir = fresh_dir("gamma_flag");
    CHECK(run_cli("theory --preset fig1 --gamma 0.5 --dim 50 --out " + dir.string()) == 0);
    CHECK(fs::exists(dir / "fig1-gamma0.5_theory.csv"));
    CHECK(run_cli("theory --preset fig1 --gamma 0.7 --dim 50 --out " + dir.string()) == 2);
}

TEST_CASE("sweep csv is byte-stable across reruns and thread counts") {
    fs::path a = fresh_dir("det_a");
    fs::path b = fresh_dir("det_b");
    const std::string base = "sweep --preset lab-small --dim 48 --reps 4 --simulate ";
    CHECK(run_cli(base + "--threads 1 --out " + a.string()) == 0);
    CHECK(run_cli(base + "--threads 8 --out " + b.string()) == 0);
    CHECK(slurp(a / "lab-small_sweep.csv") == slurp(b / "lab-small_sweep.csv"));
}

TEST_CASE("json format writes rows as json") {
    fs::path dir = fresh_dir("json_rows");
    CHECK(run_cli("theory --preset lab-small --dim 40 --format json --out " + dir.string()) == 0);
    CHECK(fs::exists(dir / "lab-small_theory.json"));
    const std::string body = slurp(dir / "lab-small_theory.json");
    CHECK(body.find("\"theory_gen_error\"") != std::string::npos);
}

TEST_CASE("linearize matches the in-process result bit for bit") {
    fs::path dir = fresh_dir("linearize");
    ScenarioConfig cfg = preset_scenario("lincheck");
    cfg.dimension = 48;
    cfg.teacher.input_dim = 48;
    cfg.student.input_dim = 48;
    for (auto& l : cfg.teacher.layers) l.width = 48;
    for (auto& l : cfg.student.layers) l.width = 48;
    save_scenario(cfg, (dir / "scenario.json").string());

    SampledNetworkPair pair = sample_network_pair(cfg, cfg.master_seed);
    for (std::size_t l = 0; l < pair.student_weights.size(); ++l)
        write_matrix(pair.student_weights[l],
                     (dir / ("student_" + std::to_string(l + 1) + ".rbm")).string());
    for (std::size_t l = 0; l < pair.teacher_weights.size(); ++l)
        write_matrix(pair.teacher_weights[l],
                     (dir / ("teacher_" + std::to_string(l + 1) + ".rbm")).string());

    CHECK(run_cli("linearize --weights-dir " + dir.string() + " --scenario " +
                  (dir / "scenario.json").string() + " --out " + (dir / "out").string()) == 0);

    const Eigen::MatrixXd omega0 = materialize_covariance(cfg.student.input_covariance, 48, {});
    LinearizationResult lin = linearize_pair(pair.student_weights, cfg.student,
                                             pair.teacher_weights, cfg.teacher, omega0);
    const Eigen::MatrixXd from_cli = read_matrix((dir / "out" / "omega_lin.rbm").string());
    CHECK((from_cli - lin.triple.omega).norm() == 0.0);
    CHECK(fs::exists(dir / "out" / "kappa_ladder.json"));
    CHECK(fs::exists(dir / "out" / "w_eff.rbm"));
    const std::string ladder = slurp(dir / "out" / "kappa_ladder.json");
    CHECK(ladder.find("\"declared\"") != std::string::npos);
}

TEST_CASE("linearize estimates covariances for external weights") {
    fs::path dir = fresh_dir("linearize_external");
    ScenarioConfig cfg = preset_scenario("lab-small");
    cfg.dimension = 40;
    cfg.teacher.input_dim = 40;
    cfg.student.input_dim = 40;
    for (auto& l : cfg.teacher.layers) l.width = 40;
    for (auto& l : cfg.student.layers) l.width = 40;
    // Sample from the declared rules, then relabel both networks as external
    // so the ladder must estimate the covariances from the rows.
    SampledNetworkPair pair = sample_network_pair(cfg, 5);
    cfg.student.layers[0].rule = WeightRule{};
    cfg.student.layers[0].rule.kind = WeightRule::Kind::external;
    cfg.teacher.layers[0].rule = WeightRule{};
    cfg.teacher.layers[0].rule.kind = WeightRule::Kind::external;
    save_scenario(cfg, (dir / "scenario.json").string());
    write_matrix(pair.student_weights[0], (dir / "student_1.rbm").string());
    write_matrix(pair.teacher_weights[0], (dir / "teacher_1.rbm").string());

    CHECK(run_cli("linearize --weights-dir " + dir.string() + " --scenario " +
                  (dir / "scenario.json").string() + " --out " + (dir / "out").string()) == 0);
    const std::string ladder = slurp(dir / "out" / "kappa_ladder.json");
    CHECK(ladder.find("\"estimated\"") != std::string::npos);
}

TEST_CASE("linearize reports a missing layer file") {
    fs::path dir = fresh_dir("linearize_missing");
    ScenarioConfig cfg = preset_scenario("lab-small");
    save_scenario(cfg, (dir / "scenario.json").string());
    CHECK(run_cli("linearize --weights-dir " + dir.string() + " --scenario " +
                  (dir / "scenario.json").string() + " --out " + (dir / "out").string()) == 1);
}

TEST_CASE("verify battery self-test: an injected sign error fails its row") {
    CHECK(run_cli("verify-equivalents --only kappa-closed") == 0);
    CHECK(run_cli("verify-equivalents --only no-such-check") == 2);
    // Mutation check: negating the gxz equivalent must fail exactly that row.
    CHECK(run_cli("verify-equivalents --only prop1-gxz --inject-sign-error") == 1);
}
