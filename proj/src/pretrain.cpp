#include "scanmix/pretrain.hpp"

#include <cmath>
#include <limits>

#include "scanmix/errors.hpp"
#include "scanmix/random.hpp"

namespace scanmix {

void ContrastiveConfig::validate() const {
    if (!(temperature > 0.0)) throw ParameterError("contrastive temperature must be > 0");
    if (epochs < 0) throw ParameterError("pre-training epochs must be >= 0");
    if (batch_size < 2) throw ParameterError("contrastive batch_size must be >= 2");
    if (embedding_dim < 1) throw ParameterError("embedding_dim must be positive");
    if (!(lr >= 0.0)) throw ParameterError("pre-training lr must be >= 0");
}

ContrastiveLoss ntxent_loss(const Eigen::Ref<const Eigen::MatrixXd>& embeddings, double temperature) {
    if (!(temperature > 0.0)) throw ParameterError("ntxent_loss: temperature must be > 0");
    const Eigen::Index n = embeddings.cols();
    if (n < 4 || n % 2 != 0) throw ParameterError("ntxent_loss: need 2B columns with B >= 2");
    for (Eigen::Index k = 0; k < n; ++k) {
        if (std::abs(embeddings.col(k).norm() - 1.0) > 1e-6) {
            throw ParameterError("ntxent_loss: embedding " + std::to_string(k) + " is not unit-norm");
        }
    }
    const Eigen::Index half = n / 2;
    const Eigen::MatrixXd logits = (embeddings.transpose() * embeddings) / temperature;

    // g(k, m) = dL/dlogit(k, m) for the anchor-k term, already divided by 2B.
    Eigen::MatrixXd g = Eigen::MatrixXd::Zero(n, n);
    ContrastiveLoss out;
    for (Eigen::Index k = 0; k < n; ++k) {
        const Eigen::Index pos = (k + half) % n;
        double m = -std::numeric_limits<double>::infinity();
        for (Eigen::Index j = 0; j < n; ++j) {
            if (j != k) m = std::max(m, logits(k, j));
        }
        double z = 0.0;
        for (Eigen::Index j = 0; j < n; ++j) {
            if (j != k) z += std::exp(logits(k, j) - m);
        }
        const double log_z = m + std::log(z);
        out.value += log_z - logits(k, pos);
        for (Eigen::Index j = 0; j < n; ++j) {
            if (j == k) continue;
            g(k, j) = std::exp(logits(k, j) - log_z) / static_cast<double>(n);
        }
        g(k, pos) -= 1.0 / static_cast<double>(n);
    }
    out.value /= static_cast<double>(n);
    // logit(k, m) = z_k . z_m / T, so dZ = Z (g + g^T) / T.
    out.grad = embeddings * (g + g.transpose()) / temperature;
    return out;
}

LossResult contrastive_loss(const ModelParams& params, const Eigen::Ref<const Eigen::MatrixXd>& views,
                            double temperature) {
    const ForwardTrace trace = forward(params, views, true);
    const Eigen::MatrixXd& h = trace.projection;
    const Eigen::RowVectorXd norms = h.colwise().norm();
    if ((norms.array() <= 0.0).any()) throw NumericError("contrastive_loss: zero projection vector");
    const Eigen::MatrixXd z = h.array().rowwise() / norms.array();

    const auto loss = ntxent_loss(z, temperature);
    if (!std::isfinite(loss.value)) throw NumericError("contrastive_loss: non-finite loss");
    // Through the normalisation: dh = (dz - z (z . dz)) / |h|.
    const Eigen::RowVectorXd dots = (z.array() * loss.grad.array()).colwise().sum();
    const Eigen::MatrixXd dh = ((loss.grad - z * dots.asDiagonal()).array().rowwise() / norms.array()).matrix();
    return {loss.value, backward(params, trace, Upstream{{}, {}, dh})};
}

Eigen::MatrixXd encode(const ModelParams& params, const Eigen::Ref<const Eigen::MatrixXd>& inputs) {
    return forward(params, inputs).features();
}

ModelParams pretrain(const LabeledDataset& data, const ModelParams& params,
                     const AugmentationPolicy& policy, const ContrastiveConfig& config,
                     std::uint64_t seed) {
    config.validate();
    policy.validate();
    if (config.embedding_dim != params.arch.projection_dim) {
        throw ParameterError("pretrain: embedding_dim differs from the projection head size");
    }
    if (data.dim() != params.arch.input_dim) throw ParameterError("pretrain: input dimension mismatch");

    ModelParams out = params;
    MomentumState state = out.layers.zeros_like();
    const auto n = static_cast<std::size_t>(data.features.cols());
    const auto batch = static_cast<std::size_t>(config.batch_size);
    const Eigen::Index dim = data.dim();

    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        auto rng = make_rng({seed, static_cast<std::uint64_t>(epoch), 0xc0417});
        const auto order = permutation(n, rng);
        for (std::size_t start = 0; start < n; start += batch) {
            const std::size_t b = std::min(batch, n - start);
            if (b < 2) break;
            Eigen::MatrixXd views(dim, static_cast<Eigen::Index>(2 * b));
            for (std::size_t k = 0; k < b; ++k) {
                const auto x = data.features.col(static_cast<Eigen::Index>(order[start + k]));
                views.col(static_cast<Eigen::Index>(k)) = augment(x, policy, rng);
                views.col(static_cast<Eigen::Index>(b + k)) = augment(x, policy, rng);
            }
            const auto loss = contrastive_loss(out, views, config.temperature);
            sgd_step(out, loss.grads, config.lr, state, config.momentum, config.weight_decay,
                     ParamGroups{true, false, true});
        }
    }
    return out;
}

}  // namespace scanmix
