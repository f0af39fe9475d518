#include "scanmix/neighbors.hpp"

#include <algorithm>
#include <sstream>

#include "scanmix/errors.hpp"
#include "scanmix/io.hpp"

namespace scanmix {

void NeighborIndex::validate() const {
    const std::size_t n = size();
    const std::size_t kk = k();
    for (std::size_t i = 0; i < n; ++i) {
        const auto& row = neighbor_ids[i];
        if (row.size() != kk || kk == 0) throw ParameterError("neighbour rows must all have K ids");
        std::vector<std::size_t> sorted = row;
        std::sort(sorted.begin(), sorted.end());
        if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end()) {
            throw ParameterError("neighbour row " + std::to_string(i) + " has duplicates");
        }
        for (auto j : row) {
            if (j >= n || j == i) throw ParameterError("neighbour row " + std::to_string(i) + " is invalid");
        }
    }
}

NeighborIndex mine_knn(const Eigen::Ref<const Eigen::MatrixXd>& features, std::size_t k) {
    const auto n = static_cast<std::size_t>(features.cols());
    if (k == 0 || k >= n) {
        throw ParameterError("mine_knn: need 0 < K < N (K=" + std::to_string(k) +
                             ", N=" + std::to_string(n) + ")");
    }
    const auto dim = features.rows();
    NeighborIndex index;
    index.neighbor_ids.resize(n);
    std::vector<std::pair<double, std::size_t>> candidates(n - 1);
    for (std::size_t i = 0; i < n; ++i) {
        std::size_t c = 0;
        for (std::size_t j = 0; j < n; ++j) {
            if (j == i) continue;
            double d = 0.0;
            for (Eigen::Index r = 0; r < dim; ++r) {
                const double diff = features(r, static_cast<Eigen::Index>(i)) -
                                    features(r, static_cast<Eigen::Index>(j));
                d += diff * diff;
            }
            candidates[c++] = {d, j};
        }
        std::partial_sort(candidates.begin(), candidates.begin() + static_cast<std::ptrdiff_t>(k),
                          candidates.end());
        auto& row = index.neighbor_ids[i];
        row.reserve(k);
        for (std::size_t m = 0; m < k; ++m) row.push_back(candidates[m].second);
    }
    return index;
}

void save_knn_csv(const NeighborIndex& index, const std::filesystem::path& path) {
    std::string out;
    for (const auto& row : index.neighbor_ids) {
        for (std::size_t m = 0; m < row.size(); ++m) {
            if (m) out += ',';
            out += std::to_string(row[m]);
        }
        out += '\n';
    }
    io::write_file_atomic(path, out);
}

NeighborIndex load_knn_csv(const std::filesystem::path& path) {
    std::istringstream in(io::read_file(path));
    NeighborIndex index;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (io::trim(line).empty()) continue;
        std::vector<std::size_t> row;
        for (auto field : io::split(io::trim(line), ',')) {
            const long long v = io::parse_int(field, line_no);
            if (v < 0) throw ParseError("negative neighbour id", line_no);
            row.push_back(static_cast<std::size_t>(v));
        }
        index.neighbor_ids.push_back(std::move(row));
    }
    if (index.neighbor_ids.empty()) throw ParseError("empty neighbour file", line_no);
    index.validate();
    return index;
}

}  // namespace scanmix
