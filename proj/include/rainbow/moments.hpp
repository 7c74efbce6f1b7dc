#pragma once

#include "rainbow/activations.hpp"

namespace rainbow {

// Per-layer Gaussian moment coefficients of an activation at pre-activation
// variance r: kappa1 is the degree-1 Stein/Hermite coefficient E phi'(N_r),
// kappa_star_sq the residual variance E phi(N_r)^2 - r * kappa1^2.
struct KappaLayer {
    double kappa1 = 0.0;
    double kappa_star_sq = 0.0;
    double r = 0.0;
};

// Cross coefficients for a pair of activations under a jointly Gaussian
// pre-activation pair with Gram [[r_a, r_cross], [r_cross, r_b]].
// cross_sq = E phi(N)psi(N~) - r_cross * kappa1_a * kappa1_b, kept signed.
struct CrossKappa {
    double kappa1_a = 0.0;
    double kappa1_b = 0.0;
    double cross_sq = 0.0;
    double r_a = 0.0;
    double r_b = 0.0;
    double r_cross = 0.0;
};

// kappa1 = E[N phi(N)] / r for N ~ N(0, r); coincides with E phi'(N) for
// smooth phi and stays defined for sign. Quadrature results are accepted only
// when consecutive orders (200 -> 400 -> 512) agree to 1e-10.
double kappa1(ActivationId act, double r);

// Direct-derivative evaluation E phi'(N_r); exists for every activation with
// a pointwise derivative. Used to cross-check the Stein path.
double kappa1_direct(ActivationId act, double r);

// E phi(N_r)^2.
double second_moment(ActivationId act, double r);

// E phi(N) psi(N~) under the bivariate Gaussian above. Rejects Gram matrices
// that are indefinite beyond 1e-10; correlations within 1e-8 of +-1 are
// routed to a one-dimensional rule along the shared direction.
double cross_moment(ActivationId act_a, ActivationId act_b, double r_a, double r_b,
                    double r_cross);

// E phi(N_r), evaluated by quadrature; should vanish for every supported
// activation (centering invariant).
double activation_mean_quad(ActivationId act, double r);

KappaLayer make_kappa_layer(ActivationId act, double r);
CrossKappa make_cross_kappa(ActivationId act_a, ActivationId act_b, double r_a, double r_b,
                            double r_cross);

}  // namespace rainbow
