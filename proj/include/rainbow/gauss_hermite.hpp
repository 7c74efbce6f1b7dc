#pragma once

#include <vector>

namespace rainbow {

struct QuadratureRule {
    std::vector<double> nodes;
    std::vector<double> weights;
};

// Probabilists' Gauss-Hermite rule: sum w_i f(x_i) ~ E f(N), N ~ N(0,1).
// Weights sum to 1 and the rule is exact for polynomials up to degree
// 2*order - 1. Valid orders are 1..512; tables are built once and cached.
const QuadratureRule& gauss_hermite(int order);

// Gauss-Laguerre rule for weight e^{-u} on [0, inf); used by the parity
// reductions for non-smooth activations.
const QuadratureRule& gauss_laguerre(int order);

inline constexpr int kQuadMaxOrder = 512;
inline constexpr int kQuadDefaultOrder = 200;

}  // namespace rainbow
