#include "rainbow/activations.hpp"

#include <cmath>

#include "rainbow/common.hpp"

namespace rainbow {

ActivationId activation_from_name(const std::string& name) {
    if (name == "identity") return ActivationId::identity;
    if (name == "tanh") return ActivationId::tanh;
    if (name == "erf") return ActivationId::erf;
    if (name == "sign") return ActivationId::sign;
    if (name == "centered_relu") return ActivationId::centered_relu;
    throw config_error("unknown activation '" + name + "'");
}

const char* activation_name(ActivationId id) {
    switch (id) {
        case ActivationId::identity: return "identity";
        case ActivationId::tanh: return "tanh";
        case ActivationId::erf: return "erf";
        case ActivationId::sign: return "sign";
        case ActivationId::centered_relu: return "centered_relu";
    }
    return "?";
}

bool activation_is_smooth(ActivationId id) {
    return id == ActivationId::identity || id == ActivationId::tanh || id == ActivationId::erf;
}

bool activation_is_odd(ActivationId id) { return id != ActivationId::centered_relu; }

double centered_relu_shift(double r) {
    if (r < 0.0) throw numeric_error("centered_relu_shift: negative variance");
    return std::sqrt(r / (2.0 * M_PI));
}

double activation_eval(ActivationId id, double x, double r) {
    switch (id) {
        case ActivationId::identity: return x;
        case ActivationId::tanh: return std::tanh(x);
        case ActivationId::erf: return std::erf(x);
        case ActivationId::sign: return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0);
        case ActivationId::centered_relu:
            return (x > 0.0 ? x : 0.0) - centered_relu_shift(r);
    }
    return 0.0;
}

double activation_derivative(ActivationId id, double x) {
    switch (id) {
        case ActivationId::identity: return 1.0;
        case ActivationId::tanh: {
            const double t = std::tanh(x);
            return 1.0 - t * t;
        }
        case ActivationId::erf: return 2.0 / std::sqrt(M_PI) * std::exp(-x * x);
        case ActivationId::sign:
            throw numeric_error("sign has no pointwise derivative; use the Stein path");
        case ActivationId::centered_relu: return x > 0.0 ? 1.0 : 0.0;
    }
    return 0.0;
}

bool activation_has_derivative(ActivationId id) { return id != ActivationId::sign; }

}  // namespace rainbow
