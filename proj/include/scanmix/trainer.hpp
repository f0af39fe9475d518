#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "scanmix/datagen.hpp"
#include "scanmix/divide.hpp"
#include "scanmix/losses.hpp"
#include "scanmix/neighbors.hpp"
#include "scanmix/net.hpp"
#include "scanmix/pretrain.hpp"

namespace scanmix {

/// Ablation rows: plain cross-entropy, SSL without pre-training, SSL on a
/// pre-trained encoder, and the full method with semantic clustering.
enum class RunMode { scanmix, ce_only, ssl_only, pretrain_ssl };

RunMode parse_run_mode(const std::string& text);
std::string to_string(RunMode mode);
bool uses_pretraining(RunMode mode);

struct Seeds {
    std::uint64_t data = 1;
    std::uint64_t model = 2;
    std::uint64_t training = 3;
};

struct ModelShape {
    std::vector<int> hidden = {64};
    int feature_dim = 16;
    int projection_dim = 32;
};

struct TrainConfig {
    int epochs = 60;
    int warmup_epochs = 5;
    double tau = 0.5;
    int k = 20;
    double lr = 0.02;  // classification lr; x0.1 from epochs / 2 on
    double lr_high = 1e-3;
    double lr_low = 1e-5;
    double noise_rate_gate = 0.6;
    double momentum = 0.9;
    double weight_decay = 5e-4;
    double cluster_weight_decay = 5e-4;
    int batch_size = 64;
    int cluster_batch_size = 128;
    Seeds seeds;
    RunMode mode = RunMode::scanmix;

    ModelShape model;
    AugmentationPolicy augment{0.1, 1.0, 1.0, {}};
    ContrastiveConfig pretrain;
    MixConfig mix;
    ScanConfig scan;
    GmmOptions gmm;

    /// Save a resumable checkpoint every N epochs into checkpoint_dir (0 = never).
    int checkpoint_every = 0;
    std::filesystem::path checkpoint_dir;

    void validate() const;
    Architecture architecture(int input_dim, int class_count) const;
    double classification_lr(int epoch) const;
};

struct EpochMetrics {
    int epoch = 0;
    std::string phase;  // "warmup" or "em"
    double test_accuracy = 0.0;
    double best_accuracy = 0.0;
    double last10_mean = 0.0;
    double predicted_noise_rate = 0.0;
    std::optional<double> divider_auc;
    double loss_warmup = 0.0;
    double loss_x = 0.0;
    double loss_u = 0.0;
    double loss_r = 0.0;
    double loss_n = 0.0;
    double loss_e = 0.0;
    double classification_lr = 0.0;
    double cluster_lr = 0.0;
    double lambda_u = 0.0;
    std::size_t clean_count = 0;
    std::size_t noisy_count = 0;
    bool gmm_degenerate = false;
    bool clean_fallback = false;

    nlohmann::json to_json() const;
};

struct Evaluation {
    double accuracy = 0.0;
    std::vector<double> per_class_accuracy;
};

/// Argmax accuracy against the clean labels of `test`.
Evaluation evaluate(const ModelParams& params, const LabeledDataset& test);

/// Best-so-far and trailing-window mean of a test-accuracy series.
class AccuracyTracker {
public:
    void add(double accuracy);
    double best() const;
    double last_mean(std::size_t window = 10) const;
    const std::vector<double>& history() const noexcept { return history_; }

private:
    std::vector<double> history_;
};

/// lr_high when the predicted noise rate exceeds the gate, lr_low otherwise.
double select_cluster_lr(double predicted_noise_rate, const TrainConfig& config);

/// mix.lambda_u above the same gate, mix.lambda_u_low at or below it.
double select_lambda_u(double predicted_noise_rate, const TrainConfig& config);

/// `epochs` passes of SGD on the cross-entropy against observed labels.
ModelParams warmup(const ModelParams& params, const LabeledDataset& data, int epochs, double lr,
                   const TrainConfig& config);

/// One pass of l_CLU mini-batches. Reads features, the neighbour index and q only.
ScanResult clustering_pass(ModelParams& params, const Eigen::Ref<const Eigen::MatrixXd>& features,
                           const NeighborIndex& knn, const QAssignment& q, const TrainConfig& config,
                           double lr, MomentumState& state, Rng& rng);

struct TrainState {
    ModelParams params;
    MomentumState momentum_cls;
    MomentumState momentum_clu;
    int next_epoch = 0;
    std::vector<double> accuracy_history;
};

struct TrainResult {
    ModelParams params;
    std::vector<EpochMetrics> metrics;
    double best_accuracy = 0.0;
    double last10_mean = 0.0;
};

using EpochCallback = std::function<void(const EpochMetrics&, const TrainState&)>;

/// The EM loop: warm-up epochs, then per epoch divide -> E-step q -> MixMatch
/// M-step pass -> clustering M-step pass. `knn` is required in scanmix mode.
TrainResult train(const LabeledDataset& data, const LabeledDataset& test, const TrainConfig& config,
                  TrainState state, const NeighborIndex* knn, const EpochCallback& on_epoch = {});

TrainState initial_state(const ModelParams& params);

void save_train_state(const std::filesystem::path& path, const TrainState& state);
TrainState load_train_state(const std::filesystem::path& path);

struct ExperimentResult {
    TrainResult train;
    ModelParams pretrained;
    std::optional<NeighborIndex> knn;
};

/// Full pipeline for one mode: init -> (pre-train, mine KNN) -> train.
ExperimentResult run_experiment(const LabeledDataset& data, const LabeledDataset& test,
                                const TrainConfig& config, const EpochCallback& on_epoch = {});

}  // namespace scanmix
