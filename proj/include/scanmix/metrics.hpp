#pragma once

#include <optional>
#include <span>
#include <vector>

namespace scanmix {

/// Area under the ROC curve of `scores` for the positive flags, ties
/// counted as one half. Empty when either class is absent.
std::optional<double> roc_auc(std::span<const double> scores, std::span<const bool> positive);

/// Aligned histograms of normalised losses for truly-clean and truly-noisy samples.
struct LossHistogram {
    std::vector<double> edges;  // bins + 1 edges over [0, 1]
    std::vector<std::size_t> clean_counts;
    std::vector<std::size_t> noisy_counts;

    std::size_t bins() const noexcept { return clean_counts.size(); }
};

/// Values outside [0, 1] are clamped into the first or last bin.
LossHistogram loss_histogram(std::span<const double> losses, std::span<const bool> truly_clean, int bins);

/// sum_b min(clean_b / |clean|, noisy_b / |noisy|); 0 when either side is empty.
double overlap_coefficient(const LossHistogram& hist);

}  // namespace scanmix
