#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "rainbow/config.hpp"
#include "rainbow/lab.hpp"

namespace rainbow {

struct SweepOptions {
    bool simulate = true;
    int threads = 1;
    std::optional<std::vector<double>> alphas;  // defaults to scenario.sample_ratios
    std::optional<int> reps;                    // defaults to scenario.replicates
};

struct SweepRow {
    double alpha = 0.0;
    double lambda = 0.0;
    double theory_gen_error = 0.0;
    double theory_bias = 0.0;
    double theory_noise = 0.0;
    double m = 0.0;
    double emp_mean = 0.0;
    double emp_stderr = 0.0;
    int reps = 0;
    double wall_seconds = 0.0;
    std::string status = "ok";
    std::string error;
    std::string warning;
};

struct SweepResult {
    std::vector<SweepRow> rows;
    std::uint64_t scenario_hash = 0;
    std::uint64_t master_seed = 0;
    std::string scenario_name;
    int dimension = 0;
    bool simulated = false;
    std::string version;
};

// Runs the full grid. Theory values come from the replicate-paired quenched
// mean when simulating, and from a single prototype realization otherwise.
// Grid points run in declared order; replicates inside a point use the worker
// pool, so output is byte-stable at any thread count.
SweepResult run_sweep(const ScenarioConfig& scenario, const SweepOptions& opts);

// Deterministic %.17g CSV renderings.
std::string sweep_csv(const SweepResult& result);
std::string theory_csv(const SweepResult& result);
std::string simulate_csv(const SweepResult& result);
std::string sweep_manifest_json(const SweepResult& result);
std::string sweep_rows_json(const SweepResult& result);

// %.17g formatting helper shared by the writers.
std::string format_double(double v);

}  // namespace rainbow
