#pragma once

#include <chrono>
#include <filesystem>
#include <map>
#include <optional>
#include <string>

#include <json.hpp>

#include "scanmix/metrics.hpp"
#include "scanmix/noise.hpp"
#include "scanmix/trainer.hpp"

namespace scanmix {

/// Flat `section.key=value` file. Blank lines and lines starting with '#'
/// are skipped. Duplicate keys are rejected.
using ConfigMap = std::map<std::string, std::string>;

ConfigMap parse_config_text(std::string_view text);
ConfigMap read_config(const std::filesystem::path& path);
std::string format_config(const ConfigMap& config);

enum class DataSource { blobs, rings, csv };

struct DataConfig {
    DataSource source = DataSource::blobs;
    int classes = 4;
    int per_class = 750;
    int dim = 2;
    double spread = 0.5;
    double radius_step = 1.0;
    double noise_sigma = 0.05;
    double test_fraction = 1.0 / 3.0;
    std::filesystem::path path;       // csv: training data (may carry noisy_label)
    std::filesystem::path test_path;  // csv: optional held-out set
};

struct NoiseConfig {
    std::optional<NoiseKind> kind;  // empty: labels kept clean
    double rate = 0.0;
    std::map<int, int> pairs;
    int weak_epochs = 1;
};

struct OutputConfig {
    std::filesystem::path dir = "run";
    int histogram_bins = 20;
    std::filesystem::path resume_from;  // checkpoint written by a previous run
};

struct PipelineConfig {
    DataConfig data;
    NoiseConfig noise;
    TrainConfig train;
    OutputConfig output;
    ConfigMap snapshot;  // every key with its effective value

    /// Throws ValidationError naming the first offending key.
    static PipelineConfig from_map(const ConfigMap& values);
};

/// Every recognised key with its default value.
ConfigMap default_config();

struct RunManifest {
    ConfigMap config;
    Seeds seeds;
    std::map<std::string, std::filesystem::path> artifacts;
    std::string version;
    double duration_seconds = 0.0;
    double final_accuracy = 0.0;

    nlohmann::json to_json() const;
};

std::string tool_version();

/// Training and test data as the config describes them, with noise applied.
std::pair<LabeledDataset, LabeledDataset> prepare_data(const PipelineConfig& config);

struct PipelineOptions {
    std::optional<std::filesystem::path> pretrained_model;  // skips pre-training
    std::optional<std::filesystem::path> knn;               // skips neighbour mining
};

/// data -> noise -> pre-train -> train -> evaluate; writes all artifacts
/// under output.dir plus manifest.json.
RunManifest run_pipeline(const PipelineConfig& config, const PipelineOptions& options = {});
RunManifest run_pipeline(const std::filesystem::path& config_path);

/// Reads a `sample_id,loss,p_clean,is_truly_clean` dump and bins the losses.
LossHistogram export_histogram(const std::filesystem::path& dump_path, int bins);
std::string histogram_csv(const LossHistogram& hist);

}  // namespace scanmix
