#pragma once

#include <optional>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "scanmix/datagen.hpp"
#include "scanmix/neighbors.hpp"
#include "scanmix/net.hpp"
#include "scanmix/random.hpp"

namespace scanmix {

/// Floor applied to every probability (or inner product) before a log.
inline constexpr double kProbClamp = 1e-8;

struct LossResult {
    double value = 0.0;
    GradientBundle grads;
};

/// Semi-supervised (MixMatch) settings for the classification term.
struct MixConfig {
    double alpha = 4.0;
    double lambda_u = 25.0;      // used when the predicted noise rate is high
    double lambda_u_low = 0.0;   // used otherwise; see TrainConfig::noise_rate_gate
    double lambda_r = 1.0;
    double sharpen_t = 0.5;
    int num_augments = 2;
    /// Guess noisy-set targets from augmented predictions (true) or use the
    /// y* = p(.|x) recorded at split time (false).
    bool reguess_noisy = true;

    void validate() const;
};

/// pi_{|Y|}: the uniform class prior.
Eigen::VectorXd uniform_prior(int class_count);

/// Labelled part of a MixMatch batch. weights hold p(clean) per sample.
struct CleanBatch {
    Eigen::MatrixXd inputs;   // d_in x n
    Eigen::MatrixXd labels;   // |Y| x n, one-hot
    Eigen::VectorXd weights;  // n
};

/// Unlabelled part; targets are y* and are only read when reguess_noisy is off.
struct NoisyBatch {
    Eigen::MatrixXd inputs;
    Eigen::MatrixXd targets;
};

/// X' and U': mixed inputs with their mixed targets, one column per sample.
struct MixedBatch {
    Eigen::MatrixXd x_inputs;
    Eigen::MatrixXd x_targets;
    Eigen::MatrixXd u_inputs;
    Eigen::MatrixXd u_targets;
    double mix_coefficient = 1.0;  // lambda' = max(lambda, 1 - lambda)
};

/// Raises each column to 1/T and renormalises.
Eigen::MatrixXd sharpen(const Eigen::MatrixXd& probs, double temperature);

/// Builds (X', U'). Throws ParameterError on an empty clean batch; an empty
/// noisy batch yields an empty U'. forced_lambda bypasses the Beta draw.
MixedBatch mixmatch(const CleanBatch& clean, const NoisyBatch& noisy, const ModelParams& params,
                    const AugmentationPolicy& policy, const MixConfig& config, Rng& rng,
                    std::optional<double> forced_lambda = std::nullopt);

struct MleResult {
    double value = 0.0;
    double loss_x = 0.0;
    double loss_u = 0.0;
    double loss_r = 0.0;
    GradientBundle grads;
};

/// l_X' + lambda_u * l_U' + lambda_r * l_r.
///   l_X' = mean cross-entropy against X' targets
///   l_U' = mean squared L2 distance between U' targets and predictions
///   l_r  = KL(pi || mean prediction over X' and U')
MleResult loss_mle(const ModelParams& params, const MixedBatch& batch, const MixConfig& config);

/// Mean cross-entropy of predictions against the given class ids.
LossResult warmup_loss(const ModelParams& params, const Eigen::Ref<const Eigen::MatrixXd>& inputs,
                       std::span<const int> labels);
LossResult warmup_loss(const ModelParams& params, const LabeledDataset& data);

struct ScanConfig {
    double lambda_e = 2.0;
    double prob_clamp = kProbClamp;

    void validate() const;
};

/// Sparse q(z_ji): pairs[i] lists the neighbours j of i with q(z_ji) = 1.
struct QAssignment {
    std::vector<std::vector<std::size_t>> pairs;

    std::size_t pair_count() const;
    bool contains(std::size_t i, std::size_t j) const;
};

/// Index of the largest entry; ties go to the smaller index.
int argmax(const Eigen::Ref<const Eigen::VectorXd>& v);

/// q(z_ji) = 1 iff j is a neighbour of i and both have the same argmax class.
QAssignment estimate_q(const Eigen::Ref<const Eigen::MatrixXd>& predictions, const NeighborIndex& knn);

struct ScanResult {
    double value = 0.0;
    double loss_n = 0.0;
    double loss_e = 0.0;
    GradientBundle grads;
};

/// l_N + lambda_e * l_e over the given anchors (all samples when empty).
///   l_N = -(1/|A|) sum_i sum_{j in q(i)} log max(p_i . p_j, clamp)
///   l_e = sum_c pbar_c log pbar_c, pbar the mean anchor prediction
/// Gradients flow through both p_i and p_j and through pbar.
ScanResult loss_scan(const ModelParams& params, const Eigen::Ref<const Eigen::MatrixXd>& inputs,
                     const NeighborIndex& knn, const QAssignment& q, const ScanConfig& config,
                     std::span<const std::size_t> anchors = {});

}  // namespace scanmix
