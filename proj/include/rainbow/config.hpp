#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "rainbow/activations.hpp"

#include <nlohmann/json_fwd.hpp>

namespace rainbow {

inline constexpr double kDefaultNormBudget = 1e4;

// Declarative covariance. Materialization always yields a symmetric PSD
// matrix whose operator norm stays within norm_budget; violations are
// reported, never repaired.
struct CovarianceSpec {
    enum class Kind {
        identity,
        power_law,
        diagonal,
        file,
        shifted_power_law_mix,
        function_of_weights,
    };
    Kind kind = Kind::identity;
    double scale = 1.0;                // identity, power_law
    double exponent = 0.0;             // power_law, >= 0
    std::vector<double> values;        // diagonal
    std::string path;                  // file
    double mix_w1 = 0.0, mix_e1 = 0.0; // shifted_power_law_mix: w1 k^-e1 + w2 k^-e2
    double mix_w2 = 0.0, mix_e2 = 0.0;
    std::string rule;                  // function_of_weights rule id
    std::string source_network = "student";
    int source_layer = -1;
    double shift = 0.5;                // rule parameter
    double norm_budget = kDefaultNormBudget;
};

// Realized weights available to function_of_weights rules.
struct WeightContext {
    const std::vector<Eigen::MatrixXd>* student = nullptr;
    const std::vector<Eigen::MatrixXd>* teacher = nullptr;
};

Eigen::MatrixXd materialize_covariance(const CovarianceSpec& spec, Eigen::Index dim,
                                       const WeightContext& context = {});

// Symmetric PSD square root used by the weight sampler; eigenvalues within
// -1e-12 of zero are clamped, anything lower is an error.
Eigen::MatrixXd covariance_sqrt(const Eigen::MatrixXd& cov);

// Deterministic operator-norm estimate for symmetric matrices.
double symmetric_operator_norm(const Eigen::MatrixXd& m);

struct WeightRule {
    enum class Kind {
        fresh_gaussian,       // W = Z C^{1/2}
        tied_to_layer,        // W = W_j, j strictly earlier, same network
        mixed,                // W = a Z C_f^{1/2} + b V_j  (teacher layer j)
        function_of_previous, // fresh draw, C computed from earlier weights
        external,             // weights ingested from files, covariance estimated
    };
    Kind kind = Kind::fresh_gaussian;
    CovarianceSpec cov;                             // fresh_gaussian
    int tied_index = -1;                            // tied_to_layer
    double fresh_coeff = 0.0, teacher_coeff = 0.0;  // mixed
    CovarianceSpec fresh_cov;                       // mixed
    int teacher_layer = -1;                         // mixed
    std::string rule;                               // function_of_previous
    int source_layer = -1;
    double shift = 0.5;
    // Linearization-side override of the induced cross covariance against the
    // teacher layer of the same index (used by the fig1 caption presets).
    std::optional<CovarianceSpec> cross_cov_override;
};

struct LayerSpec {
    int width = 0;
    bool width_is_dim = false;  // width was written as "dim" in the file
    ActivationId activation = ActivationId::identity;
    WeightRule rule;
};

struct ReadoutSpec {
    enum class Kind { iid_gaussian, file };
    Kind kind = Kind::iid_gaussian;
    double variance = 1.0;
    std::string path;
};

struct RainbowSpec {
    std::vector<LayerSpec> layers;
    int input_dim = 0;
    CovarianceSpec input_covariance;
    ReadoutSpec readout;

    int depth() const { return static_cast<int>(layers.size()); }
    // Input width of layer l (0-based): width of l-1, or input_dim for l = 0.
    int layer_input_dim(int l) const {
        return l == 0 ? input_dim : layers[static_cast<std::size_t>(l - 1)].width;
    }
    int output_dim() const { return layers.empty() ? input_dim : layers.back().width; }
};

struct ScenarioConfig {
    std::string name;
    std::string description;
    RainbowSpec teacher;
    RainbowSpec student;
    double noise_trace = 0.0;  // <Sigma>
    std::optional<CovarianceSpec> noise_covariance;
    double ridge_lambda = 1e-3;
    std::vector<double> sample_ratios;  // alpha = n / p
    int dimension = 0;
    int replicates = 2;
    std::uint64_t master_seed = 0;
    double norm_budget = kDefaultNormBudget;
};

struct LoadOptions {
    std::optional<int> dim_override;
    std::optional<int> replicates_override;
    std::optional<std::uint64_t> seed_override;
};

ScenarioConfig load_scenario(const std::string& path, const LoadOptions& opts = {});
ScenarioConfig scenario_from_json(const nlohmann::json& j, const std::string& base_dir = "",
                                  const LoadOptions& opts = {});
nlohmann::json scenario_to_json(const ScenarioConfig& config);
void save_scenario(const ScenarioConfig& config, const std::string& path);
std::uint64_t scenario_hash(const ScenarioConfig& config);

}  // namespace rainbow
