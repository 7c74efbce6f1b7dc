#pragma once

#include <Eigen/Core>
#include <string>
#include <vector>

#include "rainbow/config.hpp"
#include "rainbow/moments.hpp"

namespace rainbow {

// Population covariances feeding the asymptotic error formula: student
// features (omega, p x p), teacher features (psi, k x k) and their cross
// covariance (phi, p x k).
struct CovarianceTriple {
    Eigen::MatrixXd omega;
    Eigen::MatrixXd psi;
    Eigen::MatrixXd phi;
};

struct KappaLadder {
    std::vector<KappaLayer> student;
    std::vector<KappaLayer> teacher;
    std::vector<CrossKappa> cross;  // one per shared layer
    std::vector<std::string> student_cov_provenance;  // "declared" | "estimated"
    std::vector<std::string> teacher_cov_provenance;
};

struct LinearizationResult {
    CovarianceTriple triple;
    KappaLadder ladder;
    // Per-layer intermediates, index l = 0..depth; entry 0 is the input
    // covariance.
    std::vector<Eigen::MatrixXd> omega_layers;
    std::vector<Eigen::MatrixXd> psi_layers;
    std::vector<Eigen::MatrixXd> phi_layers;
};

// The per-layer row covariances consumed by the recursions. Shared layers
// additionally carry the student/teacher cross covariance.
struct LayerCovariances {
    std::vector<Eigen::MatrixXd> student;  // C_l
    std::vector<Eigen::MatrixXd> teacher;  // C~_l
    std::vector<Eigen::MatrixXd> cross;    // C^_l, size = shared depth
    std::vector<std::string> student_provenance;
    std::vector<std::string> teacher_provenance;
};

// Derives declared covariances from the weight rules (resolving tied/mixed
// correlation bookkeeping), estimating them from the realized rows where a
// layer is marked external.
LayerCovariances derive_layer_covariances(const std::vector<Eigen::MatrixXd>& student_weights,
                                          const RainbowSpec& student,
                                          const std::vector<Eigen::MatrixXd>& teacher_weights,
                                          const RainbowSpec& teacher);

// Runs the three linear covariance recursions for the pair of networks on
// the realized weights and returns the final triple plus all intermediates.
LinearizationResult linearize_pair(const std::vector<Eigen::MatrixXd>& student_weights,
                                   const RainbowSpec& student,
                                   const std::vector<Eigen::MatrixXd>& teacher_weights,
                                   const RainbowSpec& teacher, const Eigen::MatrixXd& omega0);

struct EffectiveLinearNet {
    Eigen::MatrixXd w_eff;  // p x d
    Eigen::MatrixXd c_eff;  // p x p, symmetric PSD
};

// Collapses the student to the equivalent linear stochastic map
// x -> w_eff x + c_eff^{1/2} xi sharing its feature second moments.
EffectiveLinearNet effective_linear_net(const std::vector<Eigen::MatrixXd>& student_weights,
                                        const std::vector<KappaLayer>& student_kappas);

// Row-covariance estimate C = cols * mean_i w_i w_i^T for ingested weights;
// with a companion matrix also returns the cross version.
Eigen::MatrixXd estimate_row_covariance(const Eigen::MatrixXd& weights);
Eigen::MatrixXd estimate_row_covariance(const Eigen::MatrixXd& weights,
                                        const Eigen::MatrixXd& companion);

}  // namespace rainbow
