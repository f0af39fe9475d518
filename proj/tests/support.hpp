#pragma once

#include <atomic>
#include <filesystem>
#include <string>

#include <Eigen/Dense>

#include "scanmix/datagen.hpp"
#include "scanmix/net.hpp"
#include "scanmix/random.hpp"

#include <unistd.h>

namespace testing {

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
public:
    TempDir() {
        static std::atomic<int> counter{0};
        path_ = std::filesystem::temp_directory_path() /
                ("scanmix_test_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
        std::filesystem::remove_all(path_);
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const std::filesystem::path& path() const { return path_; }
    std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

private:
    std::filesystem::path path_;
};

inline scanmix::Architecture small_arch(int input_dim = 3, int classes = 4) {
    scanmix::Architecture a;
    a.input_dim = input_dim;
    a.hidden = {5};
    a.feature_dim = 4;
    a.class_count = classes;
    a.projection_dim = 3;
    return a;
}

/// Seeded initialisation with non-zero biases so every tensor gets a
/// non-trivial gradient.
inline scanmix::ModelParams random_params(const scanmix::Architecture& arch, std::uint64_t seed) {
    auto p = scanmix::ModelParams::init(arch, seed);
    auto rng = scanmix::make_rng({seed, 0xb1a5});
    p.layers.for_each([&](const std::string& name, auto& t) {
        if (name.find("bias") == std::string::npos) return;
        for (Eigen::Index k = 0; k < t.size(); ++k) t.data()[k] = scanmix::uniform(rng, -0.3, 0.3);
    });
    return p;
}

inline Eigen::MatrixXd random_matrix(Eigen::Index rows, Eigen::Index cols, scanmix::Rng& rng, double scale = 1.0) {
    Eigen::MatrixXd m(rows, cols);
    for (Eigen::Index k = 0; k < m.size(); ++k) m.data()[k] = scale * scanmix::standard_normal(rng);
    return m;
}

/// Column-wise random points on the probability simplex.
inline Eigen::MatrixXd random_simplex(Eigen::Index classes, Eigen::Index cols, scanmix::Rng& rng) {
    Eigen::MatrixXd m(classes, cols);
    for (Eigen::Index c = 0; c < cols; ++c) {
        for (Eigen::Index r = 0; r < classes; ++r) m(r, c) = scanmix::gamma_sample(rng, 1.0);
        m.col(c) /= m.col(c).sum();
    }
    return m;
}

/// Multinomial logistic regression on raw features, full-batch gradient
/// descent. Returns training accuracy against clean labels. Independent of
/// the library's network code.
inline double linear_probe_accuracy(const scanmix::LabeledDataset& data, int iterations = 500, double lr = 0.5) {
    const Eigen::Index d = data.dim();
    const Eigen::Index c = data.class_count;
    const auto n = static_cast<double>(data.size());
    // Standardise features so a fixed step size works.
    const Eigen::VectorXd mean = data.features.rowwise().mean();
    Eigen::MatrixXd x = data.features.colwise() - mean;
    const Eigen::VectorXd sd = (x.array().square().rowwise().sum() / n).sqrt().max(1e-12);
    x = x.array().colwise() / sd.array();
    Eigen::MatrixXd y = Eigen::MatrixXd::Zero(c, x.cols());
    for (std::size_t i = 0; i < data.size(); ++i) y(data.clean_labels[i], static_cast<Eigen::Index>(i)) = 1.0;

    Eigen::MatrixXd w = Eigen::MatrixXd::Zero(c, d);
    Eigen::VectorXd b = Eigen::VectorXd::Zero(c);
    for (int it = 0; it < iterations; ++it) {
        Eigen::MatrixXd logits = (w * x).colwise() + b;
        for (Eigen::Index k = 0; k < logits.cols(); ++k) {
            logits.col(k).array() -= logits.col(k).maxCoeff();
            logits.col(k) = logits.col(k).array().exp();
            logits.col(k) /= logits.col(k).sum();
        }
        const Eigen::MatrixXd g = (logits - y) / n;
        w -= lr * g * x.transpose();
        b -= lr * g.rowwise().sum();
    }
    const Eigen::MatrixXd scores = (w * x).colwise() + b;
    std::size_t correct = 0;
    for (Eigen::Index k = 0; k < scores.cols(); ++k) {
        Eigen::Index best = 0;
        scores.col(k).maxCoeff(&best);
        correct += best == data.clean_labels[static_cast<std::size_t>(k)];
    }
    return static_cast<double>(correct) / n;
}

}  // namespace testing
