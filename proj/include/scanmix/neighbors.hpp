#pragma once

#include <filesystem>
#include <vector>

#include <Eigen/Dense>

namespace scanmix {

/// Per-sample K nearest neighbours N_{x_i} in pre-trained feature space.
struct NeighborIndex {
    std::vector<std::vector<std::size_t>> neighbor_ids;

    std::size_t size() const noexcept { return neighbor_ids.size(); }
    std::size_t k() const noexcept { return neighbor_ids.empty() ? 0 : neighbor_ids.front().size(); }

    /// Throws ParameterError unless every row has exactly k() distinct ids
    /// in [0, size()) excluding its own id.
    void validate() const;
};

/// Exact Euclidean K nearest neighbours of every column of `features`,
/// self excluded, ties broken toward the smaller sample id.
NeighborIndex mine_knn(const Eigen::Ref<const Eigen::MatrixXd>& features, std::size_t k);

/// One row per sample listing its K neighbour ids.
void save_knn_csv(const NeighborIndex& index, const std::filesystem::path& path);
NeighborIndex load_knn_csv(const std::filesystem::path& path);

}  // namespace scanmix
