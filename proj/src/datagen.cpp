#include "scanmix/datagen.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "scanmix/errors.hpp"
#include "scanmix/io.hpp"

namespace scanmix {

Eigen::VectorXd LabeledDataset::noisy_onehot(std::size_t i) const {
    Eigen::VectorXd y = Eigen::VectorXd::Zero(class_count);
    y(noisy_labels.at(i)) = 1.0;
    return y;
}

void LabeledDataset::validate() const {
    if (class_count < 1) throw ParameterError("class_count must be positive");
    const auto n = size();
    if (noisy_labels.size() != n || static_cast<std::size_t>(features.cols()) != n) {
        throw ParameterError("features, clean_labels and noisy_labels differ in length");
    }
    auto in_range = [&](int c) { return c >= 0 && c < class_count; };
    if (!std::all_of(clean_labels.begin(), clean_labels.end(), in_range) ||
        !std::all_of(noisy_labels.begin(), noisy_labels.end(), in_range)) {
        throw ParameterError("class id outside [0, class_count)");
    }
}

LabeledDataset LabeledDataset::subset(std::span<const std::size_t> ids) const {
    LabeledDataset out;
    out.class_count = class_count;
    out.features.resize(features.rows(), static_cast<Eigen::Index>(ids.size()));
    out.clean_labels.reserve(ids.size());
    out.noisy_labels.reserve(ids.size());
    for (std::size_t k = 0; k < ids.size(); ++k) {
        out.features.col(static_cast<Eigen::Index>(k)) = features.col(static_cast<Eigen::Index>(ids[k]));
        out.clean_labels.push_back(clean_labels.at(ids[k]));
        out.noisy_labels.push_back(noisy_labels.at(ids[k]));
    }
    return out;
}

void AugmentationPolicy::validate() const {
    if (!(additive_noise_sigma >= 0.0)) throw ParameterError("augmentation sigma must be >= 0");
    if (!(scale_jitter_lo > 0.0)) throw ParameterError("scale jitter lower bound must be > 0");
    if (!(scale_jitter_lo <= 1.0 && 1.0 <= scale_jitter_hi)) {
        throw ParameterError("scale jitter interval must contain 1");
    }
}

bool AugmentationPolicy::is_identity() const noexcept {
    return additive_noise_sigma == 0.0 && scale_jitter_lo == 1.0 && scale_jitter_hi == 1.0 &&
           std::none_of(flip_axes.begin(), flip_axes.end(), [](bool b) { return b; });
}

LabeledDataset generate_blobs(int class_count, int per_class, int dim, double spread,
                              std::uint64_t seed) {
    if (class_count < 2) throw ParameterError("generate_blobs: class_count must be >= 2");
    if (per_class < 1) throw ParameterError("generate_blobs: per_class must be >= 1");
    if (dim < 1) throw ParameterError("generate_blobs: dim must be >= 1");
    if (!(spread > 0.0)) throw ParameterError("generate_blobs: spread must be > 0");

    auto rng = make_rng({seed, 0xb10b5});
    const double min_sep = 6.0 * spread;
    double half_width =
        4.0 * spread * std::max(1.0, std::ceil(std::pow(class_count, 1.0 / dim)));

    Eigen::MatrixXd centers(dim, class_count);
    int failures = 0;
    for (int c = 0; c < class_count;) {
        for (int k = 0; k < dim; ++k) centers(k, c) = uniform(rng, -half_width, half_width);
        bool ok = true;
        for (int o = 0; o < c && ok; ++o) ok = (centers.col(c) - centers.col(o)).norm() >= min_sep;
        if (ok) {
            ++c;
        } else if (++failures % 200 == 0) {
            half_width *= 1.1;
        }
    }

    LabeledDataset out;
    out.class_count = class_count;
    const auto n = static_cast<Eigen::Index>(class_count) * per_class;
    out.features.resize(dim, n);
    Eigen::Index col = 0;
    for (int c = 0; c < class_count; ++c) {
        for (int s = 0; s < per_class; ++s, ++col) {
            for (int k = 0; k < dim; ++k) {
                out.features(k, col) = centers(k, c) + spread * standard_normal(rng);
            }
            out.clean_labels.push_back(c);
        }
    }
    out.noisy_labels = out.clean_labels;
    return out;
}

LabeledDataset generate_rings(int class_count, int per_class, double radius_step,
                              double noise_sigma, std::uint64_t seed) {
    if (class_count < 2) throw ParameterError("generate_rings: class_count must be >= 2");
    if (per_class < 1) throw ParameterError("generate_rings: per_class must be >= 1");
    if (!(radius_step > 0.0)) throw ParameterError("generate_rings: radius_step must be > 0");
    if (!(noise_sigma >= 0.0)) throw ParameterError("generate_rings: noise_sigma must be >= 0");

    auto rng = make_rng({seed, 0x21a95});
    LabeledDataset out;
    out.class_count = class_count;
    out.features.resize(2, static_cast<Eigen::Index>(class_count) * per_class);
    Eigen::Index col = 0;
    for (int c = 0; c < class_count; ++c) {
        const double radius = (c + 1) * radius_step;
        for (int s = 0; s < per_class; ++s, ++col) {
            const double angle = uniform(rng, 0.0, 2.0 * M_PI);
            const double r = noise_sigma > 0.0 ? radius + noise_sigma * standard_normal(rng) : radius;
            out.features(0, col) = r * std::cos(angle);
            out.features(1, col) = r * std::sin(angle);
            out.clean_labels.push_back(c);
        }
    }
    out.noisy_labels = out.clean_labels;
    return out;
}

std::pair<LabeledDataset, LabeledDataset> train_test_split(const LabeledDataset& data,
                                                           double test_fraction,
                                                           std::uint64_t seed) {
    if (!(test_fraction >= 0.0 && test_fraction < 1.0)) {
        throw ParameterError("test_fraction must lie in [0, 1)");
    }
    auto rng = make_rng({seed, 0x5e11});
    std::vector<std::vector<std::size_t>> by_class(data.class_count);
    for (std::size_t i = 0; i < data.size(); ++i) by_class[data.clean_labels[i]].push_back(i);

    std::vector<std::size_t> train_ids, test_ids;
    for (auto& ids : by_class) {
        shuffle(ids, rng);
        const auto n_test =
            static_cast<std::size_t>(std::llround(test_fraction * static_cast<double>(ids.size())));
        test_ids.insert(test_ids.end(), ids.begin(), ids.begin() + n_test);
        train_ids.insert(train_ids.end(), ids.begin() + n_test, ids.end());
    }
    std::sort(train_ids.begin(), train_ids.end());
    std::sort(test_ids.begin(), test_ids.end());
    return {data.subset(train_ids), data.subset(test_ids)};
}

LabeledDataset load_csv(const std::filesystem::path& path, std::optional<int> class_count) {
    const std::string text = io::read_file(path);
    std::istringstream in(text);
    std::string line;
    std::size_t line_no = 0;

    std::size_t dim = 0;
    bool has_noisy = false;
    while (std::getline(in, line)) {
        ++line_no;
        if (io::trim(line).empty()) continue;
        const auto header = io::split(io::trim(line), ',');
        for (auto& h : header) {
            if (io::trim(h) != "f" + std::to_string(dim)) break;
            ++dim;
        }
        const std::size_t rest = header.size() - dim;
        const bool label_ok = rest >= 1 && io::trim(header[dim]) == "label";
        has_noisy = rest == 2 && io::trim(header[dim + 1]) == "noisy_label";
        if (dim == 0 || !label_ok || (rest == 2 && !has_noisy) || rest > 2) {
            throw ParseError("expected header f0,...,f{d-1},label[,noisy_label]", line_no);
        }
        break;
    }
    if (dim == 0) throw ParseError("empty dataset file " + path.string(), line_no);

    std::vector<double> values;
    std::vector<int> clean, noisy;
    const std::size_t width = dim + (has_noisy ? 2 : 1);
    auto to_label = [&](std::string_view field) {
        const long long v = io::parse_int(field, line_no);
        if (v < 0 || v > std::numeric_limits<int>::max() ||
            (class_count && v >= *class_count)) {
            throw ParameterError("label " + std::to_string(v) + " out of range at line " +
                                 std::to_string(line_no));
        }
        return static_cast<int>(v);
    };
    while (std::getline(in, line)) {
        ++line_no;
        if (io::trim(line).empty()) continue;
        const auto fields = io::split(io::trim(line), ',');
        if (fields.size() != width) {
            throw ParseError("expected " + std::to_string(width) + " fields, got " +
                                 std::to_string(fields.size()),
                             line_no);
        }
        for (std::size_t k = 0; k < dim; ++k) values.push_back(io::parse_double(fields[k], line_no));
        clean.push_back(to_label(fields[dim]));
        noisy.push_back(has_noisy ? to_label(fields[dim + 1]) : clean.back());
    }
    if (clean.empty()) throw ParseError("dataset has no rows", line_no);

    LabeledDataset out;
    out.features = Eigen::Map<const Eigen::MatrixXd>(values.data(), static_cast<Eigen::Index>(dim),
                                                     static_cast<Eigen::Index>(clean.size()));
    out.clean_labels = std::move(clean);
    out.noisy_labels = std::move(noisy);
    const int max_label = std::max(*std::max_element(out.clean_labels.begin(), out.clean_labels.end()),
                                   *std::max_element(out.noisy_labels.begin(), out.noisy_labels.end()));
    out.class_count = class_count.value_or(max_label + 1);
    if (out.class_count < 2) out.class_count = 2;
    if (class_count && *class_count < 1) throw ParameterError("class_count must be positive");
    out.validate();
    return out;
}

void save_csv(const LabeledDataset& data, const std::filesystem::path& path, bool with_noisy_label) {
    data.validate();
    std::string out;
    for (int k = 0; k < data.dim(); ++k) out += "f" + std::to_string(k) + ",";
    out += with_noisy_label ? "label,noisy_label\n" : "label\n";
    for (std::size_t i = 0; i < data.size(); ++i) {
        for (int k = 0; k < data.dim(); ++k) {
            out += io::format_double(data.features(k, static_cast<Eigen::Index>(i)));
            out += ',';
        }
        out += std::to_string(data.clean_labels[i]);
        if (with_noisy_label) out += "," + std::to_string(data.noisy_labels[i]);
        out += '\n';
    }
    io::write_file_atomic(path, out);
}

Eigen::VectorXd augment(const Eigen::Ref<const Eigen::VectorXd>& x,
                        const AugmentationPolicy& policy, Rng& rng) {
    Eigen::VectorXd out = x;
    if (policy.scale_jitter_lo != 1.0 || policy.scale_jitter_hi != 1.0) {
        out *= uniform(rng, policy.scale_jitter_lo, policy.scale_jitter_hi);
    }
    const auto flips = std::min<std::size_t>(policy.flip_axes.size(), static_cast<std::size_t>(x.size()));
    for (std::size_t k = 0; k < flips; ++k) {
        if (policy.flip_axes[k] && (rng() >> 63) != 0) out(static_cast<Eigen::Index>(k)) = -out(static_cast<Eigen::Index>(k));
    }
    if (policy.additive_noise_sigma > 0.0) {
        for (Eigen::Index k = 0; k < out.size(); ++k) {
            out(k) += policy.additive_noise_sigma * standard_normal(rng);
        }
    }
    return out;
}

}  // namespace scanmix
