#include "scanmix/divide.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "scanmix/errors.hpp"
#include "scanmix/io.hpp"
#include "scanmix/losses.hpp"

namespace scanmix {

namespace {

constexpr double kLogSqrt2Pi = 0.91893853320467274178;
constexpr double kWeightFloor = 1e-10;

double log_normal(double x, double mean, double variance) {
    const double d = x - mean;
    return -kLogSqrt2Pi - 0.5 * std::log(variance) - 0.5 * d * d / variance;
}

double log_add(double a, double b) {
    const double m = std::max(a, b);
    if (m == -std::numeric_limits<double>::infinity()) return m;
    return m + std::log(std::exp(a - m) + std::exp(b - m));
}

double percentile(const std::vector<double>& sorted, double q) {
    const double pos = q * static_cast<double>(sorted.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const auto hi = std::min(lo + 1, sorted.size() - 1);
    const double frac = pos - static_cast<double>(lo);
    return sorted[lo] + frac * (sorted[hi] - sorted[lo]);
}

}  // namespace

void GmmParams::validate() const {
    for (int k = 0; k < 2; ++k) {
        if (!std::isfinite(means[k])) throw ParameterError("gmm mean is not finite");
        if (!(variances[k] > 0.0)) throw ParameterError("gmm variance must be > 0");
        if (!(weights[k] > 0.0 && weights[k] < 1.0)) throw ParameterError("gmm weight outside (0, 1)");
    }
    if (std::abs(weights[0] + weights[1] - 1.0) > 1e-9) throw ParameterError("gmm weights must sum to 1");
}

double gmm_log_likelihood(std::span<const double> values, const GmmParams& gmm) {
    double ll = 0.0;
    for (double x : values) {
        ll += log_add(std::log(gmm.weights[0]) + log_normal(x, gmm.means[0], gmm.variances[0]),
                      std::log(gmm.weights[1]) + log_normal(x, gmm.means[1], gmm.variances[1]));
    }
    return ll;
}

GmmFit fit_gmm_1d(std::span<const double> values, const GmmOptions& options) {
    const std::size_t n = values.size();
    if (n < 4) throw ParameterError("fit_gmm_1d: need at least 4 values");
    for (double v : values) {
        if (!std::isfinite(v)) throw NumericError("fit_gmm_1d: non-finite input");
    }
    std::vector<double> sorted(values.begin(), values.end());
    std::sort(sorted.begin(), sorted.end());
    if (sorted.front() == sorted.back()) throw DegeneracyError("fit_gmm_1d: all values are identical");

    const double mean = std::accumulate(sorted.begin(), sorted.end(), 0.0) / static_cast<double>(n);
    double var = 0.0;
    for (double v : sorted) var += (v - mean) * (v - mean);
    var /= static_cast<double>(n);

    GmmFit fit;
    GmmParams& g = fit.params;
    g.means[0] = percentile(sorted, 0.1);
    g.means[1] = percentile(sorted, 0.9);
    if (g.means[0] == g.means[1]) {
        g.means[0] = sorted.front();
        g.means[1] = sorted.back();
    }
    g.variances[0] = g.variances[1] = std::max(var / 4.0, options.variance_floor);
    g.weights[0] = g.weights[1] = 0.5;
    fit.log_likelihood.push_back(gmm_log_likelihood(values, g));

    std::vector<double> resp(n);
    for (int it = 0; it < options.max_iters; ++it) {
        // E-step: responsibility of component 0.
        for (std::size_t i = 0; i < n; ++i) {
            const double a = std::log(g.weights[0]) + log_normal(values[i], g.means[0], g.variances[0]);
            const double b = std::log(g.weights[1]) + log_normal(values[i], g.means[1], g.variances[1]);
            resp[i] = 1.0 / (1.0 + std::exp(b - a));
        }
        // M-step.
        double mass[2] = {0.0, 0.0}, sum[2] = {0.0, 0.0};
        for (std::size_t i = 0; i < n; ++i) {
            mass[0] += resp[i];
            mass[1] += 1.0 - resp[i];
            sum[0] += resp[i] * values[i];
            sum[1] += (1.0 - resp[i]) * values[i];
        }
        GmmParams next = g;
        for (int k = 0; k < 2; ++k) {
            if (mass[k] <= 0.0) continue;
            next.means[k] = sum[k] / mass[k];
        }
        double sq[2] = {0.0, 0.0};
        for (std::size_t i = 0; i < n; ++i) {
            const double d0 = values[i] - next.means[0];
            const double d1 = values[i] - next.means[1];
            sq[0] += resp[i] * d0 * d0;
            sq[1] += (1.0 - resp[i]) * d1 * d1;
        }
        for (int k = 0; k < 2; ++k) {
            if (mass[k] > 0.0) next.variances[k] = std::max(sq[k] / mass[k], options.variance_floor);
        }
        const double w0 = std::clamp(mass[0] / static_cast<double>(n), kWeightFloor, 1.0 - kWeightFloor);
        next.weights[0] = w0;
        next.weights[1] = 1.0 - w0;

        // A step can only lower the likelihood through rounding or the weight
        // clamp; keep the previous parameters and stop.
        const double ll = gmm_log_likelihood(values, next);
        ++fit.iterations;
        if (ll < fit.log_likelihood.back()) {
            fit.converged = true;
            break;
        }
        g = next;
        fit.log_likelihood.push_back(ll);
        const auto len = fit.log_likelihood.size();
        if (fit.log_likelihood[len - 1] - fit.log_likelihood[len - 2] < options.tol) {
            fit.converged = true;
            break;
        }
    }
    if (g.means[0] > g.means[1]) {
        std::swap(g.means[0], g.means[1]);
        std::swap(g.variances[0], g.variances[1]);
        std::swap(g.weights[0], g.weights[1]);
    }
    return fit;
}

double posterior_clean(double loss, const GmmParams& gmm) {
    const double a = std::log(gmm.weights[0]) + log_normal(loss, gmm.means[0], gmm.variances[0]);
    const double b = std::log(gmm.weights[1]) + log_normal(loss, gmm.means[1], gmm.variances[1]);
    if (a == b) return 0.5;
    return 1.0 / (1.0 + std::exp(b - a));
}

std::vector<double> per_sample_losses(const Eigen::Ref<const Eigen::MatrixXd>& probs,
                                      std::span<const int> labels) {
    if (static_cast<std::size_t>(probs.cols()) != labels.size()) {
        throw ParameterError("per_sample_losses: predictions and labels differ in length");
    }
    std::vector<double> out(labels.size());
    for (std::size_t i = 0; i < labels.size(); ++i) {
        const int y = labels[i];
        if (y < 0 || y >= probs.rows()) throw ParameterError("per_sample_losses: label out of range");
        out[i] = -std::log(std::max(probs(y, static_cast<Eigen::Index>(i)), kProbClamp));
    }
    return out;
}

std::vector<double> per_sample_losses(const ModelParams& params, const LabeledDataset& data) {
    if (params.arch.class_count != data.class_count) {
        throw ParameterError("per_sample_losses: model and dataset class counts differ");
    }
    return per_sample_losses(predict(params, data.features), data.noisy_labels);
}

std::vector<double> min_max_normalise(std::span<const double> values) {
    if (values.empty()) return {};
    const auto [lo, hi] = std::minmax_element(values.begin(), values.end());
    const double range = *hi - *lo;
    if (!(range > 0.0)) throw DegeneracyError("min_max_normalise: constant values");
    std::vector<double> out(values.size());
    for (std::size_t i = 0; i < values.size(); ++i) out[i] = (values[i] - *lo) / range;
    return out;
}

void DividedData::validate(std::size_t n) const {
    std::vector<char> seen(n, 0);
    for (const auto* ids : {&clean_ids, &noisy_ids}) {
        for (auto i : *ids) {
            if (i >= n || seen[i]) throw ParameterError("divided sets do not partition the dataset");
            seen[i] = 1;
        }
    }
    if (clean_ids.size() + noisy_ids.size() != n) throw ParameterError("divided sets lose samples");
    if (static_cast<std::size_t>(noisy_targets.cols()) != noisy_ids.size()) {
        throw ParameterError("noisy targets do not match the noisy set");
    }
}

DividedData split(const CleanPosterior& posterior, const Eigen::Ref<const Eigen::MatrixXd>& probs) {
    if (!(posterior.tau > 0.0 && posterior.tau < 1.0)) throw ParameterError("split: tau must lie in (0, 1)");
    const auto n = posterior.p_clean.size();
    if (static_cast<std::size_t>(probs.cols()) != n) throw ParameterError("split: predictions do not cover the dataset");
    DividedData out;
    for (std::size_t i = 0; i < n; ++i) {
        (posterior.p_clean[i] >= posterior.tau ? out.clean_ids : out.noisy_ids).push_back(i);
    }
    out.noisy_targets.resize(probs.rows(), static_cast<Eigen::Index>(out.noisy_ids.size()));
    for (std::size_t k = 0; k < out.noisy_ids.size(); ++k) {
        out.noisy_targets.col(static_cast<Eigen::Index>(k)) = probs.col(static_cast<Eigen::Index>(out.noisy_ids[k]));
    }
    out.predicted_noise_rate = n == 0 ? 0.0 : static_cast<double>(out.noisy_ids.size()) / static_cast<double>(n);
    return out;
}

DivideOutcome divide(const Eigen::Ref<const Eigen::MatrixXd>& probs, std::span<const int> labels,
                     double tau, const GmmOptions& options) {
    DivideOutcome out;
    out.posterior.tau = tau;
    const auto raw = per_sample_losses(probs, labels);
    try {
        out.posterior.losses = min_max_normalise(raw);
        out.gmm = fit_gmm_1d(out.posterior.losses, options);
        out.posterior.p_clean.resize(raw.size());
        for (std::size_t i = 0; i < raw.size(); ++i) {
            out.posterior.p_clean[i] = posterior_clean(out.posterior.losses[i], out.gmm.params);
        }
    } catch (const DegeneracyError&) {
        out.degenerate = true;
        out.posterior.losses.assign(raw.size(), 0.0);
        out.posterior.p_clean.assign(raw.size(), 1.0);
    }
    out.divided = split(out.posterior, probs);
    return out;
}

void save_divide_dump(const std::filesystem::path& path, const CleanPosterior& posterior,
                      std::span<const int> clean_labels, std::span<const int> noisy_labels) {
    const auto n = posterior.losses.size();
    if (clean_labels.size() != n || noisy_labels.size() != n || posterior.p_clean.size() != n) {
        throw ParameterError("save_divide_dump: length mismatch");
    }
    std::string out = "sample_id,loss,p_clean,is_truly_clean\n";
    for (std::size_t i = 0; i < n; ++i) {
        out += std::to_string(i) + "," + io::format_double(posterior.losses[i]) + "," +
               io::format_double(posterior.p_clean[i]) + "," +
               (clean_labels[i] == noisy_labels[i] ? "1" : "0") + "\n";
    }
    io::write_file_atomic(path, out);
}

}  // namespace scanmix
