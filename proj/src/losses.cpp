#include "scanmix/losses.hpp"

#include <algorithm>
#include <cmath>

#include "scanmix/errors.hpp"

namespace scanmix {

void MixConfig::validate() const {
    if (!(alpha > 0.0)) throw ParameterError("mix alpha must be > 0");
    if (!(lambda_u >= 0.0 && lambda_u_low >= 0.0)) throw ParameterError("lambda_u must be >= 0");
    if (!(lambda_r >= 0.0)) throw ParameterError("lambda_r must be >= 0");
    if (!(sharpen_t > 0.0)) throw ParameterError("sharpen temperature must be > 0");
    if (num_augments < 1) throw ParameterError("num_augments must be >= 1");
}

void ScanConfig::validate() const {
    if (!(lambda_e >= 0.0)) throw ParameterError("lambda_e must be >= 0");
    if (!(prob_clamp > 0.0)) throw ParameterError("prob_clamp must be > 0");
}

Eigen::VectorXd uniform_prior(int class_count) {
    return Eigen::VectorXd::Constant(class_count, 1.0 / class_count);
}

Eigen::MatrixXd sharpen(const Eigen::MatrixXd& probs, double temperature) {
    Eigen::MatrixXd out = probs.array().pow(1.0 / temperature);
    for (Eigen::Index c = 0; c < out.cols(); ++c) out.col(c) /= out.col(c).sum();
    return out;
}

namespace {

Eigen::MatrixXd augment_all(const Eigen::MatrixXd& inputs, const AugmentationPolicy& policy, Rng& rng) {
    Eigen::MatrixXd out(inputs.rows(), inputs.cols());
    for (Eigen::Index c = 0; c < inputs.cols(); ++c) out.col(c) = augment(inputs.col(c), policy, rng);
    return out;
}

Eigen::MatrixXd gather_columns(const Eigen::MatrixXd& m, const std::vector<std::size_t>& idx) {
    Eigen::MatrixXd out(m.rows(), static_cast<Eigen::Index>(idx.size()));
    for (std::size_t k = 0; k < idx.size(); ++k) out.col(static_cast<Eigen::Index>(k)) = m.col(static_cast<Eigen::Index>(idx[k]));
    return out;
}

}  // namespace

MixedBatch mixmatch(const CleanBatch& clean, const NoisyBatch& noisy, const ModelParams& params,
                    const AugmentationPolicy& policy, const MixConfig& config, Rng& rng,
                    std::optional<double> forced_lambda) {
    config.validate();
    policy.validate();
    const Eigen::Index n = clean.inputs.cols();
    const Eigen::Index m = noisy.inputs.cols();
    const int classes = params.arch.class_count;
    if (n == 0) throw ParameterError("mixmatch: clean batch is empty");
    if (clean.labels.rows() != classes || clean.labels.cols() != n || clean.weights.size() != n) {
        throw ParameterError("mixmatch: clean labels/weights do not match the batch");
    }
    if (!config.reguess_noisy && (noisy.targets.rows() != classes || noisy.targets.cols() != m)) {
        throw ParameterError("mixmatch: noisy targets missing");
    }
    const int augments = config.num_augments;

    std::vector<Eigen::MatrixXd> x_views, u_views;
    Eigen::MatrixXd px = Eigen::MatrixXd::Zero(classes, n);
    Eigen::MatrixXd pu = Eigen::MatrixXd::Zero(classes, m);
    for (int a = 0; a < augments; ++a) {
        x_views.push_back(augment_all(clean.inputs, policy, rng));
        px += predict(params, x_views.back());
    }
    for (int a = 0; a < augments; ++a) {
        u_views.push_back(augment_all(noisy.inputs, policy, rng));
        if (m > 0) pu += predict(params, u_views.back());
    }
    px /= augments;
    pu /= augments;

    // Label co-refinement: w * y + (1 - w) * p, then sharpening.
    for (Eigen::Index c = 0; c < n; ++c) {
        const double w = clean.weights(c);
        px.col(c) = w * clean.labels.col(c) + (1.0 - w) * px.col(c);
    }
    const Eigen::MatrixXd tx = sharpen(px, config.sharpen_t);
    const Eigen::MatrixXd tu = config.reguess_noisy ? sharpen(pu, config.sharpen_t) : noisy.targets;

    const Eigen::Index total = augments * (n + m);
    Eigen::MatrixXd all_in(clean.inputs.rows(), total);
    Eigen::MatrixXd all_tg(classes, total);
    Eigen::Index col = 0;
    for (int a = 0; a < augments; ++a, col += n) {
        all_in.middleCols(col, n) = x_views[a];
        all_tg.middleCols(col, n) = tx;
    }
    for (int a = 0; a < augments; ++a, col += m) {
        if (m == 0) continue;
        all_in.middleCols(col, m) = u_views[a];
        all_tg.middleCols(col, m) = tu;
    }

    const double lambda = forced_lambda ? *forced_lambda : beta_sample(rng, config.alpha, config.alpha);
    const double mix = std::max(lambda, 1.0 - lambda);
    const auto partner = permutation(static_cast<std::size_t>(total), rng);

    const Eigen::MatrixXd mixed_in = mix * all_in + (1.0 - mix) * gather_columns(all_in, partner);
    const Eigen::MatrixXd mixed_tg = mix * all_tg + (1.0 - mix) * gather_columns(all_tg, partner);

    MixedBatch out;
    out.mix_coefficient = mix;
    const Eigen::Index nx = augments * n;
    out.x_inputs = mixed_in.leftCols(nx);
    out.x_targets = mixed_tg.leftCols(nx);
    out.u_inputs = mixed_in.rightCols(total - nx);
    out.u_targets = mixed_tg.rightCols(total - nx);
    return out;
}

MleResult loss_mle(const ModelParams& params, const MixedBatch& batch, const MixConfig& config) {
    const Eigen::Index nx = batch.x_inputs.cols();
    const Eigen::Index nu = batch.u_inputs.cols();
    const Eigen::Index total = nx + nu;
    if (total == 0) throw ParameterError("loss_mle: empty batch");

    Eigen::MatrixXd inputs(params.arch.input_dim, total);
    if (nx) inputs.leftCols(nx) = batch.x_inputs;
    if (nu) inputs.rightCols(nu) = batch.u_inputs;
    const ForwardTrace trace = forward(params, inputs);
    const Eigen::MatrixXd& p = trace.probs;
    Eigen::MatrixXd dp = Eigen::MatrixXd::Zero(p.rows(), p.cols());

    MleResult r;
    for (Eigen::Index i = 0; i < nx; ++i) {
        for (Eigen::Index c = 0; c < p.rows(); ++c) {
            const double y = batch.x_targets(c, i);
            if (y == 0.0) continue;
            const double pc = p(c, i);
            r.loss_x -= y * std::log(std::max(pc, kProbClamp));
            if (pc > kProbClamp) dp(c, i) -= y / pc / static_cast<double>(nx);
        }
    }
    if (nx) r.loss_x /= static_cast<double>(nx);

    if (nu) {
        const Eigen::MatrixXd diff = p.rightCols(nu) - batch.u_targets;
        r.loss_u = diff.squaredNorm() / static_cast<double>(nu);
        dp.rightCols(nu) += config.lambda_u * 2.0 * diff / static_cast<double>(nu);
    }

    const Eigen::VectorXd prior = uniform_prior(params.arch.class_count);
    const Eigen::VectorXd mean_p = p.rowwise().mean();
    for (Eigen::Index c = 0; c < prior.size(); ++c) {
        const double q = std::max(mean_p(c), kProbClamp);
        r.loss_r += prior(c) * std::log(prior(c) / q);
        if (mean_p(c) > kProbClamp) {
            dp.row(c).array() += config.lambda_r * (-prior(c) / mean_p(c)) / static_cast<double>(total);
        }
    }

    r.value = r.loss_x + config.lambda_u * r.loss_u + config.lambda_r * r.loss_r;
    r.grads = backward(params, trace, Upstream{dp, {}, {}});
    return r;
}

LossResult warmup_loss(const ModelParams& params, const Eigen::Ref<const Eigen::MatrixXd>& inputs,
                       std::span<const int> labels) {
    const Eigen::Index n = inputs.cols();
    if (static_cast<std::size_t>(n) != labels.size() || n == 0) {
        throw ParameterError("warmup_loss: inputs and labels differ in length");
    }
    const ForwardTrace trace = forward(params, inputs);
    Eigen::MatrixXd dp = Eigen::MatrixXd::Zero(trace.probs.rows(), n);
    LossResult r;
    for (Eigen::Index i = 0; i < n; ++i) {
        const int y = labels[static_cast<std::size_t>(i)];
        if (y < 0 || y >= params.arch.class_count) throw ParameterError("warmup_loss: label out of range");
        const double pc = trace.probs(y, i);
        r.value -= std::log(std::max(pc, kProbClamp));
        if (pc > kProbClamp) dp(y, i) = -1.0 / pc / static_cast<double>(n);
    }
    r.value /= static_cast<double>(n);
    r.grads = backward(params, trace, Upstream{dp, {}, {}});
    return r;
}

LossResult warmup_loss(const ModelParams& params, const LabeledDataset& data) {
    return warmup_loss(params, data.features, data.noisy_labels);
}

std::size_t QAssignment::pair_count() const {
    std::size_t n = 0;
    for (const auto& row : pairs) n += row.size();
    return n;
}

bool QAssignment::contains(std::size_t i, std::size_t j) const {
    if (i >= pairs.size()) return false;
    return std::find(pairs[i].begin(), pairs[i].end(), j) != pairs[i].end();
}

int argmax(const Eigen::Ref<const Eigen::VectorXd>& v) {
    int best = 0;
    for (Eigen::Index c = 1; c < v.size(); ++c) {
        if (v(c) > v(best)) best = static_cast<int>(c);
    }
    return best;
}

QAssignment estimate_q(const Eigen::Ref<const Eigen::MatrixXd>& predictions, const NeighborIndex& knn) {
    const auto n = static_cast<std::size_t>(predictions.cols());
    if (knn.size() != n) throw ParameterError("estimate_q: predictions do not cover the neighbour index");
    std::vector<int> cls(n);
    for (std::size_t i = 0; i < n; ++i) cls[i] = argmax(predictions.col(static_cast<Eigen::Index>(i)));
    QAssignment q;
    q.pairs.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        for (auto j : knn.neighbor_ids[i]) {
            if (cls[j] == cls[i]) q.pairs[i].push_back(j);
        }
    }
    return q;
}

ScanResult loss_scan(const ModelParams& params, const Eigen::Ref<const Eigen::MatrixXd>& inputs,
                     const NeighborIndex& knn, const QAssignment& q, const ScanConfig& config,
                     std::span<const std::size_t> anchors) {
    config.validate();
    const auto n = static_cast<std::size_t>(inputs.cols());
    if (knn.size() != n || q.pairs.size() != n) {
        throw ParameterError("loss_scan: inputs, neighbour index and q differ in size");
    }
    std::vector<std::size_t> all_ids;
    if (anchors.empty()) {
        all_ids.resize(n);
        for (std::size_t i = 0; i < n; ++i) all_ids[i] = i;
        anchors = all_ids;
    }

    // Columns: anchors first, then any q-neighbours not already present.
    std::vector<long> column(n, -1);
    std::vector<std::size_t> members;
    auto add = [&](std::size_t id) {
        if (column[id] < 0) {
            column[id] = static_cast<long>(members.size());
            members.push_back(id);
        }
    };
    for (auto i : anchors) {
        if (i >= n) throw ParameterError("loss_scan: anchor id out of range");
        add(i);
    }
    for (auto i : anchors) {
        const auto& nbrs = knn.neighbor_ids[i];
        for (auto j : q.pairs[i]) {
            if (std::find(nbrs.begin(), nbrs.end(), j) == nbrs.end()) {
                throw ParameterError("loss_scan: q pair outside the neighbour set");
            }
            add(j);
        }
    }
    Eigen::MatrixXd batch(inputs.rows(), static_cast<Eigen::Index>(members.size()));
    for (std::size_t k = 0; k < members.size(); ++k) {
        batch.col(static_cast<Eigen::Index>(k)) = inputs.col(static_cast<Eigen::Index>(members[k]));
    }
    const ForwardTrace trace = forward(params, batch);
    const Eigen::MatrixXd& p = trace.probs;
    Eigen::MatrixXd dp = Eigen::MatrixXd::Zero(p.rows(), p.cols());
    const double na = static_cast<double>(anchors.size());

    ScanResult r;
    for (auto i : anchors) {
        const Eigen::Index ci = column[i];
        for (auto j : q.pairs[i]) {
            const Eigen::Index cj = column[j];
            const double s = p.col(ci).dot(p.col(cj));
            if (s > 1.0 + 1e-9) throw NumericError("loss_scan: inner product exceeds 1");
            if (s > config.prob_clamp) {
                r.loss_n -= std::log(s);
                dp.col(ci) -= p.col(cj) / (s * na);
                dp.col(cj) -= p.col(ci) / (s * na);
            } else {
                r.loss_n -= std::log(config.prob_clamp);
            }
        }
    }
    r.loss_n /= na;

    Eigen::VectorXd mean_p = Eigen::VectorXd::Zero(p.rows());
    for (auto i : anchors) mean_p += p.col(column[i]);
    mean_p /= na;
    Eigen::VectorXd d_mean(p.rows());
    for (Eigen::Index c = 0; c < mean_p.size(); ++c) {
        if (mean_p(c) > 0.0) r.loss_e += mean_p(c) * std::log(mean_p(c));
        d_mean(c) = std::log(std::max(mean_p(c), config.prob_clamp)) + 1.0;
    }
    for (auto i : anchors) dp.col(column[i]) += config.lambda_e * d_mean / na;

    r.value = r.loss_n + config.lambda_e * r.loss_e;
    if (!std::isfinite(r.value)) throw NumericError("loss_scan: non-finite loss");
    r.grads = backward(params, trace, Upstream{dp, {}, {}});
    return r;
}

}  // namespace scanmix
