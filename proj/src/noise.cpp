#include "scanmix/noise.hpp"

#include <cmath>
#include <set>

#include "scanmix/errors.hpp"
#include "scanmix/io.hpp"
#include "scanmix/losses.hpp"
#include "scanmix/random.hpp"

namespace scanmix {

void TransitionMatrix::validate() const {
    if (entries.rows() != entries.cols() || entries.rows() < 1) {
        throw ParameterError("transition matrix must be square");
    }
    if ((entries.array() < 0.0).any() || (entries.array() > 1.0).any() || !entries.allFinite()) {
        throw ParameterError("transition matrix entries must lie in [0, 1]");
    }
    for (Eigen::Index r = 0; r < entries.rows(); ++r) {
        if (std::abs(entries.row(r).sum() - 1.0) > 1e-9) {
            throw ParameterError("transition matrix row " + std::to_string(r) + " does not sum to 1");
        }
    }
}

NoiseKind parse_noise_kind(const std::string& text) {
    if (text == "symmetric") return NoiseKind::symmetric;
    if (text == "asymmetric") return NoiseKind::asymmetric;
    if (text == "semantic") return NoiseKind::semantic;
    throw ParameterError("unknown noise kind '" + text + "'");
}

std::string to_string(NoiseKind kind) {
    switch (kind) {
        case NoiseKind::symmetric: return "symmetric";
        case NoiseKind::asymmetric: return "asymmetric";
        case NoiseKind::semantic: return "semantic";
    }
    return "unknown";
}

void NoiseSpec::validate() const {
    if (!(rate >= 0.0 && rate <= 1.0)) throw ParameterError("noise rate must lie in [0, 1]");
    std::set<int> targets;
    for (const auto& [from, to] : pair_map) {
        if (!targets.insert(to).second) throw ParameterError("pair map is not injective");
    }
}

TransitionMatrix symmetric_matrix(int class_count, double eta) {
    if (class_count < 2) throw ParameterError("symmetric_matrix: class_count must be >= 2");
    if (!(eta >= 0.0 && eta <= 1.0)) throw ParameterError("symmetric_matrix: eta must lie in [0, 1]");
    TransitionMatrix m;
    m.entries = Eigen::MatrixXd::Constant(class_count, class_count, eta / (class_count - 1));
    m.entries.diagonal().setConstant(1.0 - eta);
    return m;
}

TransitionMatrix asymmetric_matrix(int class_count, double eta, const std::map<int, int>& pair_map) {
    if (class_count < 2) throw ParameterError("asymmetric_matrix: class_count must be >= 2");
    if (!(eta >= 0.0 && eta <= 1.0)) throw ParameterError("asymmetric_matrix: eta must lie in [0, 1]");
    NoiseSpec{NoiseKind::asymmetric, eta, pair_map}.validate();
    TransitionMatrix m{Eigen::MatrixXd::Identity(class_count, class_count)};
    for (const auto& [from, to] : pair_map) {
        if (from < 0 || from >= class_count || to < 0 || to >= class_count) {
            throw ParameterError("asymmetric_matrix: pair map class out of range");
        }
        if (from == to) throw ParameterError("asymmetric_matrix: class " + std::to_string(from) + " maps to itself");
        m.entries(from, from) = 1.0 - eta;
        m.entries(from, to) = eta;
    }
    return m;
}

std::map<int, int> cifar10_asymmetric_pairs() {
    // airplane 0, automobile 1, bird 2, cat 3, deer 4, dog 5, frog 6, horse 7, ship 8, truck 9
    return {{9, 1}, {2, 0}, {4, 7}, {3, 5}};
}

std::map<int, int> parse_pair_map(const std::string& text) {
    std::map<int, int> out;
    if (io::trim(text).empty()) return out;
    for (auto item : io::split(text, ',')) {
        const auto parts = io::split(io::trim(item), ':');
        if (parts.size() != 2) throw ParameterError("pair map entries must look like from:to");
        const auto from = static_cast<int>(io::parse_int(parts[0], 1));
        const auto to = static_cast<int>(io::parse_int(parts[1], 1));
        if (!out.emplace(from, to).second) throw ParameterError("pair map lists a class twice");
    }
    return out;
}

namespace {

int sample_row(const Eigen::Ref<const Eigen::RowVectorXd>& row, double u) {
    double cumulative = 0.0;
    int last_positive = 0;
    for (Eigen::Index j = 0; j < row.size(); ++j) {
        if (row(j) <= 0.0) continue;
        cumulative += row(j);
        last_positive = static_cast<int>(j);
        if (u < cumulative) return static_cast<int>(j);
    }
    return last_positive;
}

}  // namespace

LabeledDataset inject(const LabeledDataset& data, const TransitionMatrix& matrix, std::uint64_t seed) {
    data.validate();
    matrix.validate();
    if (matrix.class_count() != data.class_count) {
        throw ParameterError("inject: matrix dimension " + std::to_string(matrix.class_count()) +
                             " != class count " + std::to_string(data.class_count));
    }
    auto rng = make_rng({seed, 0x7015e});
    LabeledDataset out = data;
    for (std::size_t i = 0; i < out.size(); ++i) {
        out.noisy_labels[i] = sample_row(matrix.entries.row(data.clean_labels[i]), uniform01(rng));
    }
    return out;
}

LabeledDataset inject_semantic(const LabeledDataset& data, const ModelParams& weak_model, double eta,
                               std::uint64_t seed) {
    data.validate();
    if (!(eta >= 0.0 && eta <= 1.0)) throw ParameterError("inject_semantic: eta must lie in [0, 1]");
    if (weak_model.arch.class_count != data.class_count) {
        throw ParameterError("inject_semantic: weak model has " + std::to_string(weak_model.arch.class_count) +
                             " classes, dataset has " + std::to_string(data.class_count));
    }
    if (weak_model.arch.input_dim != data.dim()) {
        throw ParameterError("inject_semantic: weak model input dimension mismatch");
    }
    auto rng = make_rng({seed, 0x5e3a});
    LabeledDataset out = data;
    out.noisy_labels = out.clean_labels;
    const auto n = data.size();
    const auto flips = static_cast<std::size_t>(std::llround(eta * static_cast<double>(n)));
    if (flips == 0) return out;

    auto order = permutation(n, rng);
    order.resize(flips);
    Eigen::MatrixXd inputs(data.dim(), static_cast<Eigen::Index>(flips));
    for (std::size_t k = 0; k < flips; ++k) inputs.col(static_cast<Eigen::Index>(k)) = data.features.col(static_cast<Eigen::Index>(order[k]));
    const Eigen::MatrixXd probs = predict(weak_model, inputs);

    for (std::size_t k = 0; k < flips; ++k) {
        const auto i = order[k];
        const int truth = data.clean_labels[i];
        Eigen::RowVectorXd row = probs.col(static_cast<Eigen::Index>(k)).transpose();
        row(truth) = 0.0;
        double total = row.sum();
        if (!(total > 0.0)) {
            row.setConstant(1.0);
            row(truth) = 0.0;
            total = row.sum();
        }
        row /= total;
        out.noisy_labels[i] = sample_row(row, uniform01(rng));
        if (out.noisy_labels[i] == truth) {
            // Rounding left all mass on the true class; take the first other class.
            out.noisy_labels[i] = truth == 0 ? 1 : 0;
        }
    }
    return out;
}

ModelParams train_weak_model(const LabeledDataset& data, const Architecture& arch, std::uint64_t seed,
                             int epochs) {
    data.validate();
    ModelParams params = ModelParams::init(arch, seed);
    if (arch.class_count != data.class_count || arch.input_dim != data.dim()) {
        throw ParameterError("train_weak_model: architecture does not match the dataset");
    }
    MomentumState state = params.layers.zeros_like();
    auto rng = make_rng({seed, 0x3eac});
    constexpr std::size_t batch = 64;
    for (int e = 0; e < epochs; ++e) {
        const auto order = permutation(data.size(), rng);
        for (std::size_t start = 0; start < order.size(); start += batch) {
            const auto end = std::min(order.size(), start + batch);
            const std::span<const std::size_t> ids(order.data() + start, end - start);
            Eigen::MatrixXd x(data.dim(), static_cast<Eigen::Index>(ids.size()));
            std::vector<int> y(ids.size());
            for (std::size_t k = 0; k < ids.size(); ++k) {
                x.col(static_cast<Eigen::Index>(k)) = data.features.col(static_cast<Eigen::Index>(ids[k]));
                y[k] = data.clean_labels[ids[k]];
            }
            const auto loss = warmup_loss(params, x, y);
            sgd_step(params, loss.grads, 0.02, state, 0.9, 5e-4);
        }
    }
    return params;
}

TransitionMatrix empirical_transition(std::span<const int> clean_labels, std::span<const int> noisy_labels,
                                      int class_count) {
    if (clean_labels.size() != noisy_labels.size()) {
        throw ParameterError("empirical_transition: label vectors differ in length");
    }
    Eigen::MatrixXd counts = Eigen::MatrixXd::Zero(class_count, class_count);
    for (std::size_t i = 0; i < clean_labels.size(); ++i) {
        const int c = clean_labels[i];
        const int j = noisy_labels[i];
        if (c < 0 || c >= class_count || j < 0 || j >= class_count) {
            throw ParameterError("empirical_transition: label out of range");
        }
        counts(c, j) += 1.0;
    }
    for (Eigen::Index r = 0; r < class_count; ++r) {
        const double total = counts.row(r).sum();
        if (total > 0.0) {
            counts.row(r) /= total;
        } else {
            counts(r, r) = 1.0;
        }
    }
    return TransitionMatrix{counts};
}

}  // namespace scanmix
