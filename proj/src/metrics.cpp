#include "scanmix/metrics.hpp"

#include <algorithm>
#include <numeric>

#include "scanmix/errors.hpp"

namespace scanmix {

std::optional<double> roc_auc(std::span<const double> scores, std::span<const bool> positive) {
    if (scores.size() != positive.size()) throw ParameterError("roc_auc: length mismatch");
    const std::size_t n = scores.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(), [&](auto a, auto b) { return scores[a] < scores[b]; });

    // Rank-sum (Mann-Whitney U) with average ranks for ties.
    double rank_sum = 0.0;
    std::size_t n_pos = 0;
    for (std::size_t start = 0; start < n;) {
        std::size_t end = start;
        while (end < n && scores[order[end]] == scores[order[start]]) ++end;
        const double avg_rank = 0.5 * static_cast<double>(start + 1 + end);
        for (std::size_t k = start; k < end; ++k) {
            if (positive[order[k]]) {
                rank_sum += avg_rank;
                ++n_pos;
            }
        }
        start = end;
    }
    const std::size_t n_neg = n - n_pos;
    if (n_pos == 0 || n_neg == 0) return std::nullopt;
    const double u = rank_sum - 0.5 * static_cast<double>(n_pos) * static_cast<double>(n_pos + 1);
    return u / (static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

LossHistogram loss_histogram(std::span<const double> losses, std::span<const bool> truly_clean, int bins) {
    if (bins < 1) throw ParameterError("loss_histogram: bins must be >= 1");
    if (losses.size() != truly_clean.size()) throw ParameterError("loss_histogram: length mismatch");
    LossHistogram h;
    h.edges.resize(static_cast<std::size_t>(bins) + 1);
    for (int b = 0; b <= bins; ++b) h.edges[static_cast<std::size_t>(b)] = static_cast<double>(b) / bins;
    h.clean_counts.assign(static_cast<std::size_t>(bins), 0);
    h.noisy_counts.assign(static_cast<std::size_t>(bins), 0);
    for (std::size_t i = 0; i < losses.size(); ++i) {
        const double v = std::clamp(losses[i], 0.0, 1.0);
        auto b = static_cast<std::size_t>(v * bins);
        b = std::min(b, static_cast<std::size_t>(bins) - 1);
        (truly_clean[i] ? h.clean_counts : h.noisy_counts)[b] += 1;
    }
    return h;
}

double overlap_coefficient(const LossHistogram& hist) {
    const double clean = static_cast<double>(std::accumulate(hist.clean_counts.begin(), hist.clean_counts.end(), std::size_t{0}));
    const double noisy = static_cast<double>(std::accumulate(hist.noisy_counts.begin(), hist.noisy_counts.end(), std::size_t{0}));
    if (clean == 0.0 || noisy == 0.0) return 0.0;
    double overlap = 0.0;
    for (std::size_t b = 0; b < hist.bins(); ++b) {
        overlap += std::min(static_cast<double>(hist.clean_counts[b]) / clean,
                            static_cast<double>(hist.noisy_counts[b]) / noisy);
    }
    return overlap;
}

}  // namespace scanmix
