#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "rainbow/common.hpp"
#include "rainbow/config.hpp"
#include "rainbow/equivalents.hpp"
#include "rainbow/linearization.hpp"

namespace rainbow {

// Deterministic stream RNG: SplitMix64 counter + Box-Muller. Hand-rolled so
// sequences are stable across standard libraries.
class StreamRng {
  public:
    explicit StreamRng(std::uint64_t seed) : state_(seed) {}
    std::uint64_t next_u64() { return splitmix64(state_++); }
    double next_uniform() {  // (0, 1]
        return (static_cast<double>(next_u64() >> 11) + 1.0) * 0x1.0p-53;
    }
    double next_normal();

  private:
    std::uint64_t state_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

struct SampledNetworkPair {
    std::vector<Eigen::MatrixXd> teacher_weights;
    std::vector<Eigen::MatrixXd> student_weights;
    Eigen::VectorXd theta_star;
    // Which draws were tied / mixed / function-derived, per layer.
    std::vector<std::string> teacher_draw_notes;
    std::vector<std::string> student_draw_notes;
    std::uint64_t seed = 0;
};

SampledNetworkPair sample_network_pair(const ScenarioConfig& scenario, std::uint64_t seed);

// Layerwise forward pass; column i of the result is phi(x_i). layer_r supplies
// pre-activation variances and is required when centered_relu appears.
Eigen::MatrixXd forward_features(const std::vector<Eigen::MatrixXd>& weights,
                                 const std::vector<ActivationId>& activations,
                                 const Eigen::MatrixXd& inputs,
                                 const std::vector<double>* layer_r = nullptr);

struct RidgeFit {
    Eigen::VectorXd theta_hat;
    double lambda = 0.0;
    Eigen::Index n = 0;
    double gram_min_eig = 0.0;  // of X X^T / p + lambda
    double gram_max_eig = 0.0;
    double optimality_residual = 0.0;  // ||(XX^T/p + lambda) theta - Xy/sqrt(p)||
    double rhs_norm = 0.0;             // ||Xy/sqrt(p)||
};

// theta = (X X^T / p + lambda)^{-1} X y / sqrt(p), using the n x n dual form
// when p > n.
RidgeFit ridge_fit(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, double lambda);

// Exact population test error conditional on theta_hat, with noiseless test
// labels: theta*^T Psi theta*/k + theta^T Omega theta/p - 2 theta^T Phi theta*/sqrt(pk).
double empirical_gen_error_analytic(const RidgeFit& fit, const CovarianceTriple& triple,
                                    const Eigen::VectorXd& theta_star);

struct EmpiricalEstimate {
    double mean = 0.0;
    double stderr_of_mean = 0.0;  // sample std / sqrt(reps)
    int reps = 0;
    std::uint64_t seed = 0;
};

struct ReplicateSummary {
    EmpiricalEstimate empirical;
    EmpiricalEstimate theory;  // quenched per-replicate predictions
    std::vector<double> empirical_values;
    std::vector<double> theory_values;
};

// Full replicate loop at one sample ratio: per replicate, sample a network
// pair, draw n = alpha * p training points and noise, fit the ridge, and
// evaluate the analytic test error with the linearized covariance triple.
// Deterministic at any thread count (ordered reduction by replicate index).
ReplicateSummary run_replicates(const ScenarioConfig& scenario, double alpha, int reps,
                                std::uint64_t master_seed, int threads = 1);

// Columns are i.i.d. jointly Gaussian with second moments [[Omega, Phi],
// [Phi^T, Psi]]; eigenvalues in [-1e-10 * max, 0) are clipped to zero.
std::pair<Eigen::MatrixXd, Eigen::MatrixXd> sample_joint_gaussian_features(
    const CovarianceTriple& triple, Eigen::Index n, std::uint64_t seed);

// Same sampler with the joint factorization done once; used for repeated
// draws from one triple.
class JointGaussianSampler {
  public:
    explicit JointGaussianSampler(const CovarianceTriple& triple);
    std::pair<Eigen::MatrixXd, Eigen::MatrixXd> sample(Eigen::Index n, std::uint64_t seed) const;
    Eigen::Index p() const { return p_; }
    Eigen::Index k() const { return k_; }

  private:
    Eigen::MatrixXd loading_;
    Eigen::Index p_ = 0;
    Eigen::Index k_ = 0;
};

enum class McKind { mp_law, gxz, gagb, xgomgx, zxgomgxz };

struct McObservables {
    Eigen::MatrixXd a;
    Eigen::MatrixXd b;  // only for gagb
};

// Monte Carlo left-hand sides of the deterministic equivalents, evaluated
// exactly as written: G = (XX^T/p + lambda)^{-1} from sampled features. For
// mp_law the per-draw statistic is |<A (G - M)>|.
EmpiricalEstimate resolvent_functional_mc(McKind kind, const CovarianceTriple& triple,
                                          double lambda, const McObservables& obs,
                                          Eigen::Index n, int reps, std::uint64_t seed);

}  // namespace rainbow
