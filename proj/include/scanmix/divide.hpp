#pragma once

#include <filesystem>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "scanmix/datagen.hpp"
#include "scanmix/net.hpp"

namespace scanmix {

/// Two-component 1-D mixture; component 0 has the smaller mean (clean).
struct GmmParams {
    double means[2] = {0.0, 0.0};
    double variances[2] = {1.0, 1.0};
    double weights[2] = {0.5, 0.5};

    void validate() const;
};

struct GmmOptions {
    int max_iters = 100;
    double tol = 1e-6;
    double variance_floor = 1e-6;
};

struct GmmFit {
    GmmParams params;
    /// Log-likelihood after initialisation and after each accepted EM step.
    /// A step that would lower it ends the fit, so the sequence is monotone.
    std::vector<double> log_likelihood;
    int iterations = 0;
    bool converged = false;
};

/// Mixture log-likelihood sum_i log sum_k w_k N(x_i; mu_k, var_k).
double gmm_log_likelihood(std::span<const double> values, const GmmParams& gmm);

/// EM fit initialised at the 10th/90th percentiles with equal weights and
/// variance = sample variance / 4. Throws ParameterError for fewer than 4
/// values and DegeneracyError when all values are equal.
GmmFit fit_gmm_1d(std::span<const double> values, const GmmOptions& options = {});

/// Posterior of the smaller-mean component.
double posterior_clean(double loss, const GmmParams& gmm);

/// Cross-entropy of each sample against its observed label, probabilities
/// clamped at kProbClamp.
std::vector<double> per_sample_losses(const ModelParams& params, const LabeledDataset& data);
std::vector<double> per_sample_losses(const Eigen::Ref<const Eigen::MatrixXd>& probs,
                                      std::span<const int> labels);

/// (x - min) / (max - min); throws DegeneracyError when max == min.
std::vector<double> min_max_normalise(std::span<const double> values);

struct CleanPosterior {
    std::vector<double> losses;  // normalised
    std::vector<double> p_clean;
    double tau = 0.5;
};

/// Clean set X keeps observed labels; noisy set U gets y* = p(.|x).
struct DividedData {
    std::vector<std::size_t> clean_ids;
    std::vector<std::size_t> noisy_ids;
    Eigen::MatrixXd noisy_targets;  // |Y| x |U|, column k belongs to noisy_ids[k]
    double predicted_noise_rate = 0.0;

    /// Throws unless clean and noisy ids partition [0, n).
    void validate(std::size_t n) const;
};

/// Thresholds p_clean at tau. probs holds the current predictions for every sample.
DividedData split(const CleanPosterior& posterior, const Eigen::Ref<const Eigen::MatrixXd>& probs);

struct DivideOutcome {
    CleanPosterior posterior;
    GmmFit gmm;
    DividedData divided;
    bool degenerate = false;  // constant losses: everything kept as clean
};

/// per_sample_losses -> min_max_normalise -> fit_gmm_1d -> split.
DivideOutcome divide(const Eigen::Ref<const Eigen::MatrixXd>& probs, std::span<const int> labels,
                     double tau, const GmmOptions& options = {});

/// CSV `sample_id,loss,p_clean,is_truly_clean`.
void save_divide_dump(const std::filesystem::path& path, const CleanPosterior& posterior,
                      std::span<const int> clean_labels, std::span<const int> noisy_labels);

}  // namespace scanmix
