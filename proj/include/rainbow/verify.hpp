#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "rainbow/linearization.hpp"

namespace rainbow {

struct CheckResult {
    std::string name;
    bool pass = false;
    std::string detail;
    double seconds = 0.0;
};

struct VerifyOptions {
    std::optional<std::string> only;  // run a single named check
    int threads = 1;
    std::uint64_t seed = 8675309;
    // Self-test hook: negates one deterministic equivalent so the matching
    // row must fail.
    bool inject_sign_error = false;
};

// The oracle battery behind `verify-equivalents`: self-consistent solver
// closed forms and bounds, the anisotropic resolvent-law scaling, the four
// multi-resolvent equivalents against Monte Carlo, the linearization decay
// check, the kappa oracles, the ridge solver checks and the null-predictor
// limit.
std::vector<CheckResult> run_verification_battery(const VerifyOptions& opts);

std::vector<std::string> verification_check_names();

// Shared synthetic fixture: a jointly PSD covariance triple with power-law
// spectrum and a generic rotation, reproducible from the seed.
CovarianceTriple synthetic_triple(Eigen::Index p, Eigen::Index k, std::uint64_t seed);

}  // namespace rainbow
