#pragma once

#include <string>

namespace rainbow {

// Supported scalar activations. All of them are centered under a symmetric
// Gaussian input: identity/tanh/erf/sign are odd, centered_relu subtracts
// E relu(N) for N matched to the layer's pre-activation variance r, which is
// why evaluation takes r.
enum class ActivationId {
    identity,
    tanh,
    erf,
    sign,
    centered_relu,
};

ActivationId activation_from_name(const std::string& name);
const char* activation_name(ActivationId id);

// True when the activation is smooth enough for plain Gauss-Hermite
// quadrature to converge spectrally.
bool activation_is_smooth(ActivationId id);
bool activation_is_odd(ActivationId id);

// Mean of relu under N(0, r); the centering constant of centered_relu.
double centered_relu_shift(double r);

// Point evaluation. r is the pre-activation variance of the layer; it only
// matters for centered_relu.
double activation_eval(ActivationId id, double x, double r);

// Derivative where defined (sign has none away from closed form paths).
double activation_derivative(ActivationId id, double x);
bool activation_has_derivative(ActivationId id);

}  // namespace rainbow
