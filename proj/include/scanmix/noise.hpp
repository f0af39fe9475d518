#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>

#include <Eigen/Dense>

#include "scanmix/datagen.hpp"
#include "scanmix/net.hpp"

namespace scanmix {

/// Row c holds p(observed = j | true = c). Rows sum to 1.
struct TransitionMatrix {
    Eigen::MatrixXd entries;

    int class_count() const noexcept { return static_cast<int>(entries.rows()); }
    /// Throws ParameterError unless square, entries in [0,1], rows sum to 1 within 1e-9.
    void validate() const;
};

enum class NoiseKind { symmetric, asymmetric, semantic };

NoiseKind parse_noise_kind(const std::string& text);
std::string to_string(NoiseKind kind);

struct NoiseSpec {
    NoiseKind kind = NoiseKind::symmetric;
    double rate = 0.0;
    std::map<int, int> pair_map;  // asymmetric: true class -> flip target

    void validate() const;
};

/// Flip mass eta spread evenly over the other classes; 1 - eta stays on the diagonal.
TransitionMatrix symmetric_matrix(int class_count, double eta);

/// Each mapped class c moves mass eta to pair_map[c]; unmapped rows are identity.
TransitionMatrix asymmetric_matrix(int class_count, double eta, const std::map<int, int>& pair_map);

/// truck->automobile, bird->airplane, deer->horse, cat->dog on CIFAR-10 ids.
std::map<int, int> cifar10_asymmetric_pairs();

/// Parses "9:1,2:0" into a class map.
std::map<int, int> parse_pair_map(const std::string& text);

/// Resamples every observed label from the matrix row of its clean label
/// (inverse CDF in class-id order). Features and clean labels are untouched.
LabeledDataset inject(const LabeledDataset& data, const TransitionMatrix& matrix, std::uint64_t seed);

/// Flips round(eta * N) uniformly chosen samples to a class drawn from the
/// weak model's prediction with the true class removed and renormalised.
LabeledDataset inject_semantic(const LabeledDataset& data, const ModelParams& weak_model, double eta,
                               std::uint64_t seed);

/// Under-trained classifier used as the semantic noise generator: `epochs`
/// passes of SGD on the clean labels from a seeded initialisation.
ModelParams train_weak_model(const LabeledDataset& data, const Architecture& arch, std::uint64_t seed,
                             int epochs = 1);

/// Row-normalised confusion counts; empty rows become identity rows.
TransitionMatrix empirical_transition(std::span<const int> clean_labels, std::span<const int> noisy_labels,
                                      int class_count);

}  // namespace scanmix
