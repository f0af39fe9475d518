#pragma once

#include <cstdint>

#include <Eigen/Dense>

#include "scanmix/datagen.hpp"
#include "scanmix/losses.hpp"
#include "scanmix/neighbors.hpp"
#include "scanmix/net.hpp"

namespace scanmix {

struct ContrastiveConfig {
    double temperature = 0.5;
    int epochs = 100;
    int batch_size = 256;
    int embedding_dim = 32;
    double lr = 0.05;
    double momentum = 0.9;
    double weight_decay = 1e-4;

    void validate() const;
};

struct ContrastiveLoss {
    double value = 0.0;
    Eigen::MatrixXd grad;  // same shape as the embeddings
};

/// Normalised temperature-scaled cross-entropy over 2B unit embeddings.
/// Columns [0, B) are the first views and [B, 2B) the second, so the
/// positive of column k is column (k + B) mod 2B; every other column is a
/// negative. Returns the mean over all 2B anchors and its gradient.
ContrastiveLoss ntxent_loss(const Eigen::Ref<const Eigen::MatrixXd>& embeddings, double temperature);

/// NT-Xent of the L2-normalised projections of `views` (first views in
/// columns [0, B), second views in [B, 2B)) with gradients for every tensor.
LossResult contrastive_loss(const ModelParams& params, const Eigen::Ref<const Eigen::MatrixXd>& views,
                            double temperature);

/// Contrastive pre-training of the encoder and projection head. Reads only
/// the features of `data`; the classification head is left untouched.
ModelParams pretrain(const LabeledDataset& data, const ModelParams& params,
                     const AugmentationPolicy& policy, const ContrastiveConfig& config,
                     std::uint64_t seed);

/// Encoder output f_phi(x) for every sample.
Eigen::MatrixXd encode(const ModelParams& params, const Eigen::Ref<const Eigen::MatrixXd>& inputs);

}  // namespace scanmix
