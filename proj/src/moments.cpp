#include "rainbow/moments.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <utility>

#include "rainbow/common.hpp"
#include "rainbow/gauss_hermite.hpp"

namespace rainbow {

namespace {

constexpr double kAgreeTol = 1e-10;
constexpr double kDegenerateRho = 1.0 - 1e-8;

bool orders_agree(double a, double b) {
    return std::abs(a - b) <= kAgreeTol * std::max({1.0, std::abs(a), std::abs(b)});
}

// Runs an order-indexed evaluation on the doubling ladder 200 -> 400 -> 512
// and accepts once two consecutive orders agree.
double adaptive(const std::function<double(int)>& eval, const char* what) {
    int order = kQuadDefaultOrder;
    double prev = eval(order);
    while (order < kQuadMaxOrder) {
        const int next = std::min(2 * order, kQuadMaxOrder);
        const double cur = eval(next);
        if (orders_agree(prev, cur)) return cur;
        prev = cur;
        order = next;
    }
    throw numeric_error(std::string("quadrature non-convergence in ") + what +
                        ": successive orders disagree beyond 1e-10");
}

template <class F>
double gh_expect(int order, F&& f) {
    const QuadratureRule& rule = gauss_hermite(order);
    double acc = 0.0;
    for (std::size_t i = 0; i < rule.nodes.size(); ++i)
        acc += rule.weights[i] * f(rule.nodes[i]);
    return acc;
}

// E[phi(N) sign(N~)] for smooth odd phi at any correlation, including the
// degenerate ones. Rotate so the sign argument becomes a coordinate T; then
// E[sign(T) h(T)] with h odd and smooth reduces to a Gauss-Laguerre integral
// of the smooth even function h(t)/t.
double smooth_sign_cross(ActivationId smooth_act, double r_smooth, double rho) {
    const double q = std::sqrt(std::max(0.0, 1.0 - rho * rho));
    const double s = std::sqrt(r_smooth);
    auto eval = [&](int order) {
        const QuadratureRule& lag = gauss_laguerre(order);
        const QuadratureRule& gh = gauss_hermite(order);
        double acc = 0.0;
        for (std::size_t i = 0; i < lag.nodes.size(); ++i) {
            const double t = std::sqrt(2.0 * lag.nodes[i]);
            double h = 0.0;
            for (std::size_t j = 0; j < gh.nodes.size(); ++j)
                h += gh.weights[j] * activation_eval(smooth_act, s * (rho * t - q * gh.nodes[j]),
                                                     r_smooth);
            acc += lag.weights[i] * (h / t);
        }
        return std::sqrt(2.0 / M_PI) * acc;
    };
    return adaptive(eval, "smooth x sign cross moment");
}

// E[relu(N) relu(N~)] for standard bivariate scaling; the arc-cosine kernel.
double relu_relu_raw(double r_a, double r_b, double rho) {
    rho = std::clamp(rho, -1.0, 1.0);
    return std::sqrt(r_a * r_b) / (2.0 * M_PI) *
           (std::sqrt(std::max(0.0, 1.0 - rho * rho)) + rho * (M_PI - std::acos(rho)));
}

double kappa1_stein_quad(ActivationId act, double r) {
    const double s = std::sqrt(r);
    return adaptive(
        [&](int order) {
            return gh_expect(order, [&](double x) {
                return x * activation_eval(act, s * x, r) / s;
            });
        },
        "kappa1 (Stein path)");
}

}  // namespace

double kappa1(ActivationId act, double r) {
    if (r < 0.0) throw numeric_error("kappa1: negative variance r");
    switch (act) {
        case ActivationId::identity: return 1.0;
        case ActivationId::sign:
            if (r == 0.0) throw numeric_error("kappa1(sign) is undefined at r = 0");
            return std::sqrt(2.0 / (M_PI * r));
        case ActivationId::centered_relu:
            // Stein: E[N relu(N)] / r = 1/2 at any r; the shift is killed by
            // E N = 0.
            return 0.5;
        default: break;
    }
    if (r == 0.0) return activation_derivative(act, 0.0);
    return kappa1_stein_quad(act, r);
}

double kappa1_direct(ActivationId act, double r) {
    if (r < 0.0) throw numeric_error("kappa1_direct: negative variance r");
    if (!activation_has_derivative(act))
        throw numeric_error("kappa1_direct: activation has no pointwise derivative");
    if (act == ActivationId::identity) return 1.0;
    if (r == 0.0) return activation_derivative(act, 0.0);
    const double s = std::sqrt(r);
    if (act == ActivationId::centered_relu) {
        // E 1_{N>0}; the quadrature sees a jump, but the symmetric rule sums
        // the indicator's weights to exactly 1/2.
        return 0.5;
    }
    return adaptive(
        [&](int order) {
            return gh_expect(order, [&](double x) { return activation_derivative(act, s * x); });
        },
        "kappa1 (derivative path)");
}

double second_moment(ActivationId act, double r) {
    if (r < 0.0) throw numeric_error("second_moment: negative variance r");
    if (r == 0.0) {
        const double v = activation_eval(act, 0.0, 0.0);
        return v * v;
    }
    switch (act) {
        case ActivationId::identity: return r;
        case ActivationId::sign: return 1.0;
        case ActivationId::centered_relu:
            // E relu(N_r)^2 - (E relu(N_r))^2 = r/2 - r/(2 pi).
            return r * (0.5 - 1.0 / (2.0 * M_PI));
        default: break;
    }
    const double s = std::sqrt(r);
    return adaptive(
        [&](int order) {
            return gh_expect(order, [&](double x) {
                const double v = activation_eval(act, s * x, r);
                return v * v;
            });
        },
        "second_moment");
}

double activation_mean_quad(ActivationId act, double r) {
    const double s = std::sqrt(r);
    return adaptive(
        [&](int order) {
            return gh_expect(order, [&](double x) { return activation_eval(act, s * x, r); });
        },
        "activation mean");
}

double cross_moment(ActivationId act_a, ActivationId act_b, double r_a, double r_b,
                    double r_cross) {
    if (r_a < 0.0 || r_b < 0.0)
        throw numeric_error("cross_moment: negative variance in Gram matrix");
    const double det = r_a * r_b - r_cross * r_cross;
    if (det < -1e-10 * std::max(1.0, r_a * r_b))
        throw numeric_error("cross_moment: pre-activation Gram matrix is not PSD");
    // Degenerate directions: either variable is a.s. zero and every supported
    // activation is centered at zero.
    if (r_a == 0.0 || r_b == 0.0) {
        const double va = activation_eval(act_a, 0.0, 0.0);
        const double vb = activation_eval(act_b, 0.0, 0.0);
        if (r_a == 0.0 && r_b == 0.0) return va * vb;
        if (r_a == 0.0) return va == 0.0 ? 0.0 : va * activation_mean_quad(act_b, r_b);
        return vb == 0.0 ? 0.0 : vb * activation_mean_quad(act_a, r_a);
    }
    double rho = std::clamp(r_cross / std::sqrt(r_a * r_b), -1.0, 1.0);

    // Canonical order keeps the dispatch table small and makes the swap
    // symmetry exact.
    if (static_cast<int>(act_a) > static_cast<int>(act_b))
        return cross_moment(act_b, act_a, r_b, r_a, r_cross);

    // identity x anything: E[N psi(N~)] = r_cross * kappa1_psi(r_b) by Stein.
    if (act_a == ActivationId::identity) {
        if (act_b == ActivationId::identity) return r_cross;
        return r_cross * kappa1(act_b, r_b);
    }
    // centered_relu x odd partner: relu = (x + |x|)/2 and the |x| and shift
    // parts pair to zero against odd partners by joint sign symmetry.
    if (act_b == ActivationId::centered_relu && act_a != ActivationId::centered_relu)
        return 0.5 * r_cross * kappa1(act_a, r_a);
    if (act_a == ActivationId::centered_relu && act_b == ActivationId::centered_relu) {
        const double shift = centered_relu_shift(r_a) * centered_relu_shift(r_b);
        return relu_relu_raw(r_a, r_b, rho) - shift;
    }
    if (act_a == ActivationId::sign && act_b == ActivationId::sign)
        return 2.0 / M_PI * std::asin(rho);
    if (act_b == ActivationId::sign) return smooth_sign_cross(act_a, r_a, rho);

    // Smooth x smooth. Near-degenerate correlations collapse to the shared
    // direction; otherwise tensorized Gauss-Hermite over the Cholesky factor.
    const double sa = std::sqrt(r_a);
    const double sb = std::sqrt(r_b);
    if (std::abs(rho) > kDegenerateRho) {
        const double sgn = rho >= 0.0 ? 1.0 : -1.0;
        return adaptive(
            [&](int order) {
                return gh_expect(order, [&](double x) {
                    return activation_eval(act_a, sa * x, r_a) *
                           activation_eval(act_b, sgn * sb * x, r_b);
                });
            },
            "degenerate cross moment");
    }
    const double q = std::sqrt(1.0 - rho * rho);
    return adaptive(
        [&](int order) {
            const QuadratureRule& rule = gauss_hermite(order);
            double acc = 0.0;
            for (std::size_t i = 0; i < rule.nodes.size(); ++i) {
                const double xi = rule.nodes[i];
                double inner = 0.0;
                for (std::size_t j = 0; j < rule.nodes.size(); ++j)
                    inner += rule.weights[j] *
                             activation_eval(act_b, sb * (rho * xi + q * rule.nodes[j]), r_b);
                acc += rule.weights[i] * activation_eval(act_a, sa * xi, r_a) * inner;
            }
            return acc;
        },
        "cross moment");
}

KappaLayer make_kappa_layer(ActivationId act, double r) {
    KappaLayer layer;
    layer.r = r;
    layer.kappa1 = kappa1(act, r);
    const double sm = second_moment(act, r);
    double star = sm - r * layer.kappa1 * layer.kappa1;
    const double tol = 1e-10 * std::max(1.0, std::abs(sm));
    if (star < -tol)
        throw numeric_error("kappa_star_sq is negative beyond tolerance for " +
                            std::string(activation_name(act)) + " at r=" + std::to_string(r));
    layer.kappa_star_sq = std::max(star, 0.0);
    return layer;
}

CrossKappa make_cross_kappa(ActivationId act_a, ActivationId act_b, double r_a, double r_b,
                            double r_cross) {
    CrossKappa ck;
    ck.r_a = r_a;
    ck.r_b = r_b;
    ck.r_cross = r_cross;
    ck.kappa1_a = kappa1(act_a, r_a);
    ck.kappa1_b = kappa1(act_b, r_b);
    // Stored signed; only the square enters the Phi recursion.
    ck.cross_sq = cross_moment(act_a, act_b, r_a, r_b, r_cross) -
                  r_cross * ck.kappa1_a * ck.kappa1_b;
    return ck;
}

}  // namespace rainbow
