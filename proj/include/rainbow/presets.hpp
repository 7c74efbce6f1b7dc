#pragma once

#include <string>
#include <vector>

#include "rainbow/config.hpp"

namespace rainbow {

// Built-in scenarios. fig1-gamma{0.0,0.2,0.5,0.8} encode the four-layer
// student / one-layer teacher experiment with power-law covariances, the
// W2 = W1 tie and the (W1 W1^T + I/2)^{-1} third-layer covariance rule at
// lambda = 1e-4, d = 1000, 20 replicates. The -caption variants override the
// first-layer cross covariance to I/2 on the linearization side. lab-small
// and lincheck are compact scenarios for the verification battery.
std::vector<std::string> preset_names();
bool is_preset(const std::string& name);
ScenarioConfig preset_scenario(const std::string& name);

}  // namespace rainbow
