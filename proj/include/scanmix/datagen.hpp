#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "scanmix/random.hpp"

namespace scanmix {

/// Feature vectors with hidden clean labels and observed noisy labels.
///
/// Samples are stored column-wise: features.col(i) is sample i. Labels are
/// held as class ids; noisy_onehot() expands the observed label.
struct LabeledDataset {
    Eigen::MatrixXd features;
    std::vector<int> clean_labels;
    std::vector<int> noisy_labels;
    int class_count = 0;

    std::size_t size() const noexcept { return clean_labels.size(); }
    int dim() const noexcept { return static_cast<int>(features.rows()); }

    Eigen::VectorXd noisy_onehot(std::size_t i) const;

    /// Throws ParameterError when any invariant is violated.
    void validate() const;

    LabeledDataset subset(std::span<const std::size_t> ids) const;
};

struct AugmentationPolicy {
    double additive_noise_sigma = 0.0;
    double scale_jitter_lo = 1.0;
    double scale_jitter_hi = 1.0;
    /// One entry per feature axis; a true entry flips that axis with p = 1/2.
    std::vector<bool> flip_axes;

    void validate() const;
    bool is_identity() const noexcept;
};

/// Isotropic Gaussian blobs, one per class, with pairwise-separated centers.
LabeledDataset generate_blobs(int class_count, int per_class, int dim, double spread,
                              std::uint64_t seed);

/// Concentric 2-D annuli; class c lies on radius (c + 1) * radius_step.
LabeledDataset generate_rings(int class_count, int per_class, double radius_step,
                              double noise_sigma, std::uint64_t seed);

/// Stratified split. Returns (train, test); test gets round(fraction * n_c) of each class.
std::pair<LabeledDataset, LabeledDataset> train_test_split(const LabeledDataset& data,
                                                           double test_fraction,
                                                           std::uint64_t seed);

/// Reads `f0,...,f{d-1},label[,noisy_label]`. When no noisy_label column is
/// present the observed labels equal the clean ones. class_count defaults to
/// max(label) + 1.
LabeledDataset load_csv(const std::filesystem::path& path,
                        std::optional<int> class_count = std::nullopt);

/// Writes features with shortest round-trip formatting. The noisy_label
/// column is emitted when requested.
void save_csv(const LabeledDataset& data, const std::filesystem::path& path,
              bool with_noisy_label);

/// One stochastic view of x. Same rng state gives the same output.
Eigen::VectorXd augment(const Eigen::Ref<const Eigen::VectorXd>& x,
                        const AugmentationPolicy& policy, Rng& rng);

}  // namespace scanmix
