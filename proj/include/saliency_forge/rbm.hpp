#pragma once
// Bernoulli restricted Boltzmann machine: energy model, exact enumeration for
// tiny instances, contrastive-divergence training and posterior inference.

#include <cstddef>
#include <string_view>

#include <Eigen/Dense>

#include "saliency_forge/core.hpp"

namespace saliency_forge {

// λ = (W, a, b) with W of shape visible × hidden.
struct RbmParams {
    Eigen::MatrixXd weights;
    Eigen::VectorXd visible_bias;
    Eigen::VectorXd hidden_bias;

    Eigen::Index n_visible() const noexcept { return weights.rows(); }
    Eigen::Index n_hidden() const noexcept { return weights.cols(); }

    void validate() const;
};

RbmParams zero_params(Eigen::Index n_visible, Eigen::Index n_hidden);

struct TrainConfig {
    double learning_rate = 0.001;
    std::size_t batch_size = 35;
    std::size_t n_iterations = 250;  // full passes over the samples
    std::size_t cd_steps = 1;
    RngSeed seed{};

    void validate() const;
};

// Named dataset presets: "mnist" (batch 5, lr 0.01, 100 passes) and
// "cifar"/"imagenet" (batch 35, lr 0.001, 250 passes).
TrainConfig train_preset(std::string_view name);

// S × n visible activation probabilities in [0,1].
using SampleMatrix = Eigen::MatrixXd;

void validate_samples(const SampleMatrix& samples);

struct TrainReport {
    std::size_t iterations = 0;
    std::size_t updates = 0;
    double reconstruction_error = 0.0;  // mean squared, last pass
};

// −(aᵀx + bᵀh + xᵀWh) for binary x, h.
double energy(const RbmParams& params, const Eigen::VectorXd& x, const Eigen::VectorXd& h);

// Exhaustive sums over all 2^(n+m) states; n + m ≤ kMaxEnumerationUnits.
inline constexpr Eigen::Index kMaxEnumerationUnits = 20;
double log_partition_function(const RbmParams& params);
double partition_function(const RbmParams& params);
double joint_probability(const RbmParams& params, const Eigen::VectorXd& x,
                         const Eigen::VectorXd& h);

// P(H_j = 1 | X = x) = sigmoid(b_j + Σ_i x_i W_ij), x ∈ [0,1]^n.
Eigen::VectorXd hidden_posterior(const RbmParams& params, const Eigen::VectorXd& x);
// P(X_i = 1 | H = h) = sigmoid(a_i + Σ_j h_j W_ij), h ∈ [0,1]^m.
Eigen::VectorXd visible_posterior(const RbmParams& params, const Eigen::VectorXd& h);

// Row-wise hidden posteriors for a whole sample matrix (S × m).
Eigen::MatrixXd hidden_posterior_rows(const RbmParams& params, const SampleMatrix& samples);

// CD-k with Bernoulli hidden samples and mean-field visible reconstructions.
RbmParams train_cd(const SampleMatrix& samples, const TrainConfig& config,
                   Eigen::Index n_hidden, TrainReport* report = nullptr);

// The symmetric reparametrization of hidden unit j: W'_j = −W_j, b'_j = −b_j,
// a' = a + W_j. Leaves the visible marginal unchanged and complements P(h_j | x).
RbmParams mirror_hidden_unit(const RbmParams& params, Eigen::Index j);

// Mirrors every hidden unit whose weight column sums below zero so that both
// members of a symmetric pair share one (W, b).
RbmParams canonical_orientation(const RbmParams& params);

// Mean exact log P(x) over binary samples, by enumeration.
double exact_log_likelihood(const RbmParams& params, const SampleMatrix& samples);

// Exact gradient of exact_log_likelihood: data term minus model expectation.
RbmParams exact_log_likelihood_gradient(const RbmParams& params, const SampleMatrix& samples);

double sigmoid(double z) noexcept;

}  // namespace saliency_forge
