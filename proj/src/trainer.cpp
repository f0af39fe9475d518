#include "scanmix/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <numeric>

#include "scanmix/errors.hpp"
#include "scanmix/metrics.hpp"

namespace scanmix {

RunMode parse_run_mode(const std::string& text) {
    if (text == "scanmix") return RunMode::scanmix;
    if (text == "ce_only") return RunMode::ce_only;
    if (text == "ssl_only") return RunMode::ssl_only;
    if (text == "pretrain_ssl") return RunMode::pretrain_ssl;
    throw ParameterError("unknown run mode '" + text + "'");
}

std::string to_string(RunMode mode) {
    switch (mode) {
        case RunMode::scanmix: return "scanmix";
        case RunMode::ce_only: return "ce_only";
        case RunMode::ssl_only: return "ssl_only";
        case RunMode::pretrain_ssl: return "pretrain_ssl";
    }
    return "unknown";
}

bool uses_pretraining(RunMode mode) { return mode == RunMode::scanmix || mode == RunMode::pretrain_ssl; }

void TrainConfig::validate() const {
    if (epochs < 0) throw ParameterError("epochs must be >= 0");
    if (warmup_epochs < 0 || warmup_epochs > epochs) {
        throw ParameterError("warmup_epochs must lie in [0, epochs]");
    }
    if (!(tau > 0.0 && tau < 1.0)) throw ParameterError("tau must lie in (0, 1)");
    if (k < 1) throw ParameterError("k must be >= 1");
    if (!(noise_rate_gate > 0.0 && noise_rate_gate < 1.0)) throw ParameterError("noise_rate_gate must lie in (0, 1)");
    if (!(lr >= 0.0 && lr_high >= 0.0 && lr_low >= 0.0)) throw ParameterError("learning rates must be >= 0");
    if (!(momentum >= 0.0 && momentum < 1.0)) throw ParameterError("momentum must lie in [0, 1)");
    if (!(weight_decay >= 0.0 && cluster_weight_decay >= 0.0)) throw ParameterError("weight decay must be >= 0");
    if (batch_size < 1 || cluster_batch_size < 1) throw ParameterError("batch sizes must be >= 1");
    if (checkpoint_every < 0) throw ParameterError("checkpoint_every must be >= 0");
    augment.validate();
    pretrain.validate();
    mix.validate();
    scan.validate();
}

Architecture TrainConfig::architecture(int input_dim, int class_count) const {
    Architecture a;
    a.input_dim = input_dim;
    a.hidden = model.hidden;
    a.feature_dim = model.feature_dim;
    a.class_count = class_count;
    a.projection_dim = model.projection_dim;
    return a;
}

double TrainConfig::classification_lr(int epoch) const {
    return 2 * epoch >= epochs ? lr * 0.1 : lr;
}

nlohmann::json EpochMetrics::to_json() const {
    nlohmann::json j = {{"epoch", epoch},
                        {"phase", phase},
                        {"test_accuracy", test_accuracy},
                        {"best_accuracy", best_accuracy},
                        {"last10_mean", last10_mean},
                        {"predicted_noise_rate", predicted_noise_rate},
                        {"divider_auc", nullptr},
                        {"loss_warmup", loss_warmup},
                        {"loss_x", loss_x},
                        {"loss_u", loss_u},
                        {"loss_r", loss_r},
                        {"loss_n", loss_n},
                        {"loss_e", loss_e},
                        {"classification_lr", classification_lr},
                        {"cluster_lr", cluster_lr},
                        {"lambda_u", lambda_u},
                        {"clean_count", clean_count},
                        {"noisy_count", noisy_count},
                        {"gmm_degenerate", gmm_degenerate},
                        {"clean_fallback", clean_fallback}};
    if (divider_auc) j["divider_auc"] = *divider_auc;
    return j;
}

Evaluation evaluate(const ModelParams& params, const LabeledDataset& test) {
    test.validate();
    if (test.size() == 0) throw ParameterError("evaluate: empty test set");
    const Eigen::MatrixXd probs = predict(params, test.features);
    Evaluation ev;
    std::vector<std::size_t> hits(test.class_count, 0), totals(test.class_count, 0);
    std::size_t correct = 0;
    for (std::size_t i = 0; i < test.size(); ++i) {
        const int truth = test.clean_labels[i];
        const bool ok = argmax(probs.col(static_cast<Eigen::Index>(i))) == truth;
        correct += ok;
        hits[truth] += ok;
        totals[truth] += 1;
    }
    ev.accuracy = static_cast<double>(correct) / static_cast<double>(test.size());
    for (int c = 0; c < test.class_count; ++c) {
        ev.per_class_accuracy.push_back(totals[c] ? static_cast<double>(hits[c]) / static_cast<double>(totals[c]) : 0.0);
    }
    return ev;
}

void AccuracyTracker::add(double accuracy) { history_.push_back(accuracy); }

double AccuracyTracker::best() const {
    return history_.empty() ? 0.0 : *std::max_element(history_.begin(), history_.end());
}

double AccuracyTracker::last_mean(std::size_t window) const {
    if (history_.empty()) return 0.0;
    const std::size_t n = std::min(window, history_.size());
    return std::accumulate(history_.end() - static_cast<std::ptrdiff_t>(n), history_.end(), 0.0) /
           static_cast<double>(n);
}

double select_cluster_lr(double predicted_noise_rate, const TrainConfig& config) {
    if (!(predicted_noise_rate >= 0.0 && predicted_noise_rate <= 1.0)) {
        throw ParameterError("select_cluster_lr: rate must lie in [0, 1]");
    }
    return predicted_noise_rate > config.noise_rate_gate ? config.lr_high : config.lr_low;
}

double select_lambda_u(double predicted_noise_rate, const TrainConfig& config) {
    if (!(predicted_noise_rate >= 0.0 && predicted_noise_rate <= 1.0)) {
        throw ParameterError("select_lambda_u: rate must lie in [0, 1]");
    }
    return predicted_noise_rate > config.noise_rate_gate ? config.mix.lambda_u : config.mix.lambda_u_low;
}

namespace {

Eigen::MatrixXd gather(const Eigen::MatrixXd& m, std::span<const std::size_t> ids) {
    Eigen::MatrixXd out(m.rows(), static_cast<Eigen::Index>(ids.size()));
    for (std::size_t k = 0; k < ids.size(); ++k) out.col(static_cast<Eigen::Index>(k)) = m.col(static_cast<Eigen::Index>(ids[k]));
    return out;
}

double ce_epoch(ModelParams& params, const LabeledDataset& data, double lr, MomentumState& state,
                const TrainConfig& config, Rng& rng) {
    const auto order = permutation(data.size(), rng);
    const auto batch = static_cast<std::size_t>(config.batch_size);
    double total = 0.0;
    std::size_t steps = 0;
    std::vector<int> labels;
    for (std::size_t start = 0; start < order.size(); start += batch) {
        const std::span<const std::size_t> ids(order.data() + start, std::min(batch, order.size() - start));
        labels.resize(ids.size());
        for (std::size_t k = 0; k < ids.size(); ++k) labels[k] = data.noisy_labels[ids[k]];
        const auto loss = warmup_loss(params, gather(data.features, ids), labels);
        if (!std::isfinite(loss.value)) throw NumericError("non-finite warm-up loss");
        sgd_step(params, loss.grads, lr, state, config.momentum, config.weight_decay);
        total += loss.value;
        ++steps;
    }
    return steps ? total / static_cast<double>(steps) : 0.0;
}

/// Promotes the |Y| samples with the highest p(clean) when the clean set is empty.
bool ensure_clean_set(DividedData& div, const CleanPosterior& post, const Eigen::MatrixXd& probs, int classes) {
    if (!div.clean_ids.empty() || div.noisy_ids.empty()) return false;
    std::vector<std::size_t> ranked = div.noisy_ids;
    std::stable_sort(ranked.begin(), ranked.end(),
                     [&](auto a, auto b) { return post.p_clean[a] > post.p_clean[b]; });
    const auto take = std::min<std::size_t>(static_cast<std::size_t>(classes), ranked.size());
    div.clean_ids.assign(ranked.begin(), ranked.begin() + static_cast<std::ptrdiff_t>(take));
    std::sort(div.clean_ids.begin(), div.clean_ids.end());
    std::vector<std::size_t> rest;
    std::set_difference(div.noisy_ids.begin(), div.noisy_ids.end(), div.clean_ids.begin(), div.clean_ids.end(),
                        std::back_inserter(rest));
    div.noisy_ids = std::move(rest);
    div.noisy_targets = gather(probs, div.noisy_ids);
    return true;
}

struct MlePassResult {
    double loss_x = 0.0, loss_u = 0.0, loss_r = 0.0;
};

MlePassResult mle_pass(ModelParams& params, const LabeledDataset& data, const DividedData& div,
                       const CleanPosterior& post, const TrainConfig& config, const MixConfig& mix,
                       double lr, MomentumState& state, Rng& rng) {
    const int classes = data.class_count;
    auto clean_order = div.clean_ids;
    shuffle(clean_order, rng);
    const auto noisy_positions = permutation(div.noisy_ids.size(), rng);
    const auto batch = static_cast<std::size_t>(config.batch_size);

    MlePassResult acc;
    std::size_t steps = 0;
    std::size_t cursor = 0;
    for (std::size_t start = 0; start < clean_order.size(); start += batch) {
        const std::span<const std::size_t> cids(clean_order.data() + start, std::min(batch, clean_order.size() - start));
        CleanBatch clean;
        clean.inputs = gather(data.features, cids);
        clean.labels = Eigen::MatrixXd::Zero(classes, static_cast<Eigen::Index>(cids.size()));
        clean.weights.resize(static_cast<Eigen::Index>(cids.size()));
        for (std::size_t k = 0; k < cids.size(); ++k) {
            clean.labels(data.noisy_labels[cids[k]], static_cast<Eigen::Index>(k)) = 1.0;
            clean.weights(static_cast<Eigen::Index>(k)) = post.p_clean[cids[k]];
        }
        NoisyBatch noisy;
        if (!noisy_positions.empty()) {
            std::vector<std::size_t> ids, positions;
            for (std::size_t k = 0; k < cids.size(); ++k, ++cursor) {
                const auto pos = noisy_positions[cursor % noisy_positions.size()];
                positions.push_back(pos);
                ids.push_back(div.noisy_ids[pos]);
            }
            noisy.inputs = gather(data.features, ids);
            noisy.targets = gather(div.noisy_targets, positions);
        } else {
            noisy.inputs.resize(data.dim(), 0);
            noisy.targets.resize(classes, 0);
        }
        const auto mixed = mixmatch(clean, noisy, params, config.augment, mix, rng);
        const auto loss = loss_mle(params, mixed, mix);
        if (!std::isfinite(loss.value)) {
            throw NumericError("non-finite l_MLE (l_X'=" + std::to_string(loss.loss_x) +
                               ", l_U'=" + std::to_string(loss.loss_u) + ", l_r=" + std::to_string(loss.loss_r) + ")");
        }
        sgd_step(params, loss.grads, lr, state, config.momentum, config.weight_decay);
        acc.loss_x += loss.loss_x;
        acc.loss_u += loss.loss_u;
        acc.loss_r += loss.loss_r;
        ++steps;
    }
    if (steps) {
        acc.loss_x /= static_cast<double>(steps);
        acc.loss_u /= static_cast<double>(steps);
        acc.loss_r /= static_cast<double>(steps);
    }
    return acc;
}

void fill_divide_metrics(EpochMetrics& m, const DivideOutcome& div, const LabeledDataset& data) {
    m.predicted_noise_rate = div.divided.predicted_noise_rate;
    m.clean_count = div.divided.clean_ids.size();
    m.noisy_count = div.divided.noisy_ids.size();
    m.gmm_degenerate = div.degenerate;
    std::unique_ptr<bool[]> truly_clean(new bool[data.size()]);
    for (std::size_t i = 0; i < data.size(); ++i) truly_clean[i] = data.clean_labels[i] == data.noisy_labels[i];
    m.divider_auc = roc_auc(div.posterior.p_clean, std::span<const bool>(truly_clean.get(), data.size()));
}

}  // namespace

ModelParams warmup(const ModelParams& params, const LabeledDataset& data, int epochs, double lr,
                   const TrainConfig& config) {
    if (epochs < 0) throw ParameterError("warmup: epochs must be >= 0");
    data.validate();
    ModelParams out = params;
    MomentumState state = out.layers.zeros_like();
    for (int e = 0; e < epochs; ++e) {
        auto rng = make_rng({config.seeds.training, static_cast<std::uint64_t>(e), 0x3a4e});
        ce_epoch(out, data, lr, state, config, rng);
    }
    return out;
}

ScanResult clustering_pass(ModelParams& params, const Eigen::Ref<const Eigen::MatrixXd>& features,
                           const NeighborIndex& knn, const QAssignment& q, const TrainConfig& config,
                           double lr, MomentumState& state, Rng& rng) {
    const auto n = static_cast<std::size_t>(features.cols());
    const auto anchors = permutation(n, rng);
    const auto batch = static_cast<std::size_t>(config.cluster_batch_size);
    ScanResult acc;
    std::size_t steps = 0;
    for (std::size_t start = 0; start < n; start += batch) {
        const std::span<const std::size_t> ids(anchors.data() + start, std::min(batch, n - start));
        const auto loss = loss_scan(params, features, knn, q, config.scan, ids);
        sgd_step(params, loss.grads, lr, state, config.momentum, config.cluster_weight_decay);
        acc.value += loss.value;
        acc.loss_n += loss.loss_n;
        acc.loss_e += loss.loss_e;
        ++steps;
    }
    if (steps) {
        acc.value /= static_cast<double>(steps);
        acc.loss_n /= static_cast<double>(steps);
        acc.loss_e /= static_cast<double>(steps);
    }
    return acc;
}

TrainState initial_state(const ModelParams& params) {
    TrainState s;
    s.params = params;
    s.momentum_cls = params.layers.zeros_like();
    s.momentum_clu = params.layers.zeros_like();
    return s;
}

void save_train_state(const std::filesystem::path& path, const TrainState& state) {
    Checkpoint cp;
    cp.params = state.params;
    cp.aux["momentum_cls"] = state.momentum_cls;
    cp.aux["momentum_clu"] = state.momentum_clu;
    cp.meta = {{"next_epoch", state.next_epoch}, {"accuracy_history", state.accuracy_history}};
    save_checkpoint(path, cp);
}

TrainState load_train_state(const std::filesystem::path& path) {
    const Checkpoint cp = load_checkpoint(path);
    TrainState s;
    s.params = cp.params;
    auto aux = [&](const char* name) {
        auto it = cp.aux.find(name);
        return it == cp.aux.end() ? cp.params.layers.zeros_like() : it->second;
    };
    s.momentum_cls = aux("momentum_cls");
    s.momentum_clu = aux("momentum_clu");
    s.next_epoch = cp.meta.value("next_epoch", 0);
    s.accuracy_history = cp.meta.value("accuracy_history", std::vector<double>{});
    return s;
}

TrainResult train(const LabeledDataset& data, const LabeledDataset& test, const TrainConfig& config,
                  TrainState state, const NeighborIndex* knn, const EpochCallback& on_epoch) {
    config.validate();
    data.validate();
    state.params.validate();
    if (state.params.arch.input_dim != data.dim() || state.params.arch.class_count != data.class_count) {
        throw ParameterError("train: model does not match the dataset");
    }
    if (config.mode == RunMode::scanmix) {
        if (!knn) throw ParameterError("train: scanmix mode needs a neighbour index");
        if (knn->size() != data.size()) throw ParameterError("train: neighbour index does not cover the dataset");
    }
    if (!state.params.layers.same_shape(state.momentum_cls)) state.momentum_cls = state.params.layers.zeros_like();
    if (!state.params.layers.same_shape(state.momentum_clu)) state.momentum_clu = state.params.layers.zeros_like();

    AccuracyTracker tracker;
    for (double a : state.accuracy_history) tracker.add(a);
    TrainResult result;

    for (int e = state.next_epoch; e < config.epochs; ++e) {
        auto rng = make_rng({config.seeds.training, static_cast<std::uint64_t>(e), 0x7ea1});
        EpochMetrics m;
        m.epoch = e;
        m.classification_lr = config.classification_lr(e);
        const bool warm = config.mode == RunMode::ce_only || e < config.warmup_epochs;

        try {
            if (warm) {
                m.phase = "warmup";
                m.loss_warmup = ce_epoch(state.params, data, m.classification_lr, state.momentum_cls, config, rng);
                const Eigen::MatrixXd probs = predict(state.params, data.features);
                fill_divide_metrics(m, divide(probs, data.noisy_labels, config.tau, config.gmm), data);
            } else {
                m.phase = "em";
                // Division and E-step both use the parameters from the previous epoch.
                const Eigen::MatrixXd probs = predict(state.params, data.features);
                DivideOutcome div = divide(probs, data.noisy_labels, config.tau, config.gmm);
                fill_divide_metrics(m, div, data);
                m.clean_fallback = ensure_clean_set(div.divided, div.posterior, probs, data.class_count);
                div.divided.validate(data.size());

                MixConfig mix = config.mix;
                mix.lambda_u = m.lambda_u = select_lambda_u(m.predicted_noise_rate, config);
                std::optional<QAssignment> q;
                if (config.mode == RunMode::scanmix) {
                    m.cluster_lr = select_cluster_lr(m.predicted_noise_rate, config);
                    q = estimate_q(probs, *knn);
                }
                const auto mle = mle_pass(state.params, data, div.divided, div.posterior, config, mix,
                                          m.classification_lr, state.momentum_cls, rng);
                m.loss_x = mle.loss_x;
                m.loss_u = mle.loss_u;
                m.loss_r = mle.loss_r;
                if (q) {
                    const auto clu = clustering_pass(state.params, data.features, *knn, *q, config, m.cluster_lr,
                                                     state.momentum_clu, rng);
                    m.loss_n = clu.loss_n;
                    m.loss_e = clu.loss_e;
                }
            }
            if (!state.params.layers.flatten().allFinite()) throw NumericError("parameters became non-finite");
            m.test_accuracy = evaluate(state.params, test).accuracy;
        } catch (const NumericError& err) {
            std::string where = "epoch " + std::to_string(e) + " (" + m.phase + "): " + err.what();
            if (!config.checkpoint_dir.empty()) {
                const auto dump = config.checkpoint_dir / "diagnostic.bin";
                try {
                    save_train_state(dump, state);
                    where += "; state dumped to " + dump.string();
                } catch (const std::exception&) {
                    where += "; state dump failed";
                }
            }
            throw NumericError(where);
        }

        tracker.add(m.test_accuracy);
        m.best_accuracy = tracker.best();
        m.last10_mean = tracker.last_mean(10);
        state.next_epoch = e + 1;
        state.accuracy_history = tracker.history();
        result.metrics.push_back(m);
        if (on_epoch) on_epoch(m, state);
        if (config.checkpoint_every > 0 && !config.checkpoint_dir.empty() && (e + 1) % config.checkpoint_every == 0) {
            save_train_state(config.checkpoint_dir / ("epoch_" + std::to_string(e + 1) + ".bin"), state);
        }
    }
    result.params = std::move(state.params);
    result.best_accuracy = tracker.best();
    result.last10_mean = tracker.last_mean(10);
    return result;
}

ExperimentResult run_experiment(const LabeledDataset& data, const LabeledDataset& test,
                                const TrainConfig& config, const EpochCallback& on_epoch) {
    config.validate();
    const auto arch = config.architecture(data.dim(), data.class_count);
    ExperimentResult out;
    out.pretrained = ModelParams::init(arch, config.seeds.model);
    if (uses_pretraining(config.mode)) {
        out.pretrained = pretrain(data, out.pretrained, config.augment, config.pretrain, config.seeds.training);
    }
    if (config.mode == RunMode::scanmix) {
        out.knn = mine_knn(encode(out.pretrained, data.features), static_cast<std::size_t>(config.k));
    }
    out.train = train(data, test, config, initial_state(out.pretrained), out.knn ? &*out.knn : nullptr, on_epoch);
    return out;
}

}  // namespace scanmix
