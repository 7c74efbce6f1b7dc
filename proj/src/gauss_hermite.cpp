#include "rainbow/gauss_hermite.hpp"

#include <Eigen/Dense>
#include <cmath>
#include <map>
#include <mutex>
#include <utility>

#include "rainbow/common.hpp"

namespace rainbow {

namespace {

// Golub-Welsch: nodes are the eigenvalues of the Jacobi matrix of the
// orthogonal polynomial recurrence, weights are mu0 times the squared first
// components of the normalized eigenvectors.
QuadratureRule golub_welsch(const std::vector<double>& diag, const std::vector<double>& offdiag,
                            double mu0) {
    const int n = static_cast<int>(diag.size());
    Eigen::MatrixXd jacobi = Eigen::MatrixXd::Zero(n, n);
    for (int i = 0; i < n; ++i) jacobi(i, i) = diag[static_cast<std::size_t>(i)];
    for (int i = 0; i + 1 < n; ++i) {
        jacobi(i, i + 1) = offdiag[static_cast<std::size_t>(i)];
        jacobi(i + 1, i) = offdiag[static_cast<std::size_t>(i)];
    }
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(jacobi);
    if (es.info() != Eigen::Success) throw numeric_error("golub_welsch: eigensolver failed");
    QuadratureRule rule;
    rule.nodes.resize(static_cast<std::size_t>(n));
    rule.weights.resize(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        rule.nodes[static_cast<std::size_t>(i)] = es.eigenvalues()(i);
        const double v0 = es.eigenvectors()(0, i);
        rule.weights[static_cast<std::size_t>(i)] = mu0 * v0 * v0;
    }
    return rule;
}

QuadratureRule build_hermite(int order) {
    // Probabilists' Hermite: a_k = 0, b_k = sqrt(k).
    std::vector<double> diag(static_cast<std::size_t>(order), 0.0);
    std::vector<double> off;
    off.reserve(static_cast<std::size_t>(order > 0 ? order - 1 : 0));
    for (int k = 1; k < order; ++k) off.push_back(std::sqrt(static_cast<double>(k)));
    QuadratureRule rule = golub_welsch(diag, off, 1.0);
    // Symmetrize: pair up mirrored nodes so odd integrands cancel exactly.
    const int n = order;
    for (int i = 0; i < n / 2; ++i) {
        const int j = n - 1 - i;
        const double x = 0.5 * (rule.nodes[static_cast<std::size_t>(j)] -
                                rule.nodes[static_cast<std::size_t>(i)]);
        const double w = 0.5 * (rule.weights[static_cast<std::size_t>(i)] +
                                rule.weights[static_cast<std::size_t>(j)]);
        rule.nodes[static_cast<std::size_t>(i)] = -x;
        rule.nodes[static_cast<std::size_t>(j)] = x;
        rule.weights[static_cast<std::size_t>(i)] = w;
        rule.weights[static_cast<std::size_t>(j)] = w;
    }
    if (n % 2 == 1) rule.nodes[static_cast<std::size_t>(n / 2)] = 0.0;
    return rule;
}

QuadratureRule build_laguerre(int order) {
    // Laguerre (alpha = 0): a_k = 2k+1, b_k = k.
    std::vector<double> diag, off;
    diag.reserve(static_cast<std::size_t>(order));
    for (int k = 0; k < order; ++k) diag.push_back(2.0 * k + 1.0);
    for (int k = 1; k < order; ++k) off.push_back(static_cast<double>(k));
    return golub_welsch(diag, off, 1.0);
}

const QuadratureRule& cached(int order, bool hermite) {
    if (order < 1 || order > kQuadMaxOrder)
        throw config_error("quadrature order out of range [1, 512]: " + std::to_string(order));
    static std::mutex mtx;
    static std::map<std::pair<int, bool>, QuadratureRule> cache;
    std::lock_guard<std::mutex> lock(mtx);
    auto key = std::make_pair(order, hermite);
    auto it = cache.find(key);
    if (it == cache.end())
        it = cache.emplace(key, hermite ? build_hermite(order) : build_laguerre(order)).first;
    return it->second;
}

}  // namespace

const QuadratureRule& gauss_hermite(int order) { return cached(order, true); }
const QuadratureRule& gauss_laguerre(int order) { return cached(order, false); }

}  // namespace rainbow
