#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>

#include "scanmix/divide.hpp"
#include "scanmix/errors.hpp"
#include "scanmix/io.hpp"
#include "scanmix/losses.hpp"
#include "support.hpp"

using namespace scanmix;

namespace {

double normal_pdf(double x, double m, double v) {
    return std::exp(-(x - m) * (x - m) / (2 * v)) / std::sqrt(2 * M_PI * v);
}

// Direct mixture log-likelihood, no log-sum-exp.
double reference_ll(const std::vector<double>& x, const GmmParams& g) {
    double ll = 0.0;
    for (double v : x) {
        ll += std::log(g.weights[0] * normal_pdf(v, g.means[0], g.variances[0]) +
                       g.weights[1] * normal_pdf(v, g.means[1], g.variances[1]));
    }
    return ll;
}

std::vector<double> mixture_draws(std::size_t n, double m0, double m1, double sd, Rng& rng) {
    std::vector<double> out(n);
    for (auto& v : out) v = (uniform01(rng) < 0.5 ? m0 : m1) + sd * standard_normal(rng);
    return out;
}

CleanPosterior synthetic_posterior(std::vector<double> p_clean, double tau) {
    CleanPosterior post;
    post.losses.assign(p_clean.size(), 0.5);
    post.p_clean = std::move(p_clean);
    post.tau = tau;
    return post;
}

}  // namespace

TEST_CASE("per-sample losses") {
    const Eigen::MatrixXd p = (Eigen::MatrixXd(3, 3) << 0.7, 0.1, 1.0,  //
                               0.2, 0.3, 0.0,                          //
                               0.1, 0.6, 0.0)
                                  .finished();
    const std::vector<int> labels{0, 2, 0};
    const auto l = per_sample_losses(p, labels);
    CHECK(l[0] == doctest::Approx(0.35667494393873245).epsilon(1e-9));
    CHECK(l[1] == doctest::Approx(0.5108256237659907).epsilon(1e-9));
    CHECK(l[2] <= 1e-7);

    const Eigen::MatrixXd uniform = Eigen::MatrixXd::Constant(5, 2, 0.2);
    for (double v : per_sample_losses(uniform, std::vector<int>{4, 1})) CHECK(v == doctest::Approx(std::log(5.0)));

    // A zero probability is clamped rather than infinite.
    CHECK(per_sample_losses(p, std::vector<int>{1, 0, 1})[2] == doctest::Approx(-std::log(kProbClamp)));
    CHECK_THROWS_AS(per_sample_losses(p, std::vector<int>{0, 1}), ParameterError);
    CHECK_THROWS_AS(per_sample_losses(p, std::vector<int>{0, 1, 3}), ParameterError);

    const auto model = ModelParams::zeros(testing::small_arch(3, 4));
    LabeledDataset d;
    d.features = Eigen::MatrixXd::Ones(3, 2);
    d.clean_labels = d.noisy_labels = {0, 3};
    d.class_count = 4;
    for (double v : per_sample_losses(model, d)) CHECK(v == doctest::Approx(std::log(4.0)));
    d.class_count = 5;
    CHECK_THROWS_AS(per_sample_losses(model, d), ParameterError);
}

TEST_CASE("min-max normalisation") {
    const auto n = min_max_normalise(std::vector<double>{2.0, 4.0, 3.0});
    CHECK(n == std::vector<double>{0.0, 1.0, 0.5});
    CHECK_THROWS_AS(min_max_normalise(std::vector<double>{1.0, 1.0}), DegeneracyError);
}

TEST_CASE("gmm recovers a known mixture") {
    auto rng = make_rng({71});
    const auto x = mixture_draws(1000, 0.1, 0.8, 0.02, rng);
    const auto fit = fit_gmm_1d(x);
    CHECK(std::abs(fit.params.means[0] - 0.1) < 0.02);
    CHECK(std::abs(fit.params.means[1] - 0.8) < 0.02);
    CHECK(fit.params.weights[0] + fit.params.weights[1] == doctest::Approx(1.0));
    CHECK(fit.converged);
    fit.params.validate();
    CHECK(gmm_log_likelihood(x, fit.params) == doctest::Approx(reference_ll(x, fit.params)).epsilon(1e-10));
}

TEST_CASE("gmm log-likelihood never decreases") {
    auto rng = make_rng({72});
    for (int trial = 0; trial < 30; ++trial) {
        std::vector<double> x;
        if (trial % 3 == 0) {
            for (int i = 0; i < 200; ++i) x.push_back(0.5 + 0.1 * standard_normal(rng));
        } else {
            x = mixture_draws(40 + uniform_index(rng, 300), uniform01(rng), uniform01(rng), 0.05 + 0.1 * uniform01(rng), rng);
        }
        const auto fit = fit_gmm_1d(x);
        REQUIRE(fit.log_likelihood.size() >= 2);
        for (std::size_t k = 1; k < fit.log_likelihood.size(); ++k) {
            CHECK(fit.log_likelihood[k] >= fit.log_likelihood[k - 1]);
        }
        CHECK(fit.params.means[0] <= fit.params.means[1]);
        CHECK(fit.params.variances[0] >= 1e-6);
        CHECK(fit.params.variances[1] >= 1e-6);
    }
}

TEST_CASE("gmm beats a grid search over the means") {
    // The oracle scans (mu0, mu1) on a 0.002 grid holding variances and
    // weights at the fitted values; EM must be at least as good.
    auto rng = make_rng({73});
    for (int trial = 0; trial < 5; ++trial) {
        const auto x = mixture_draws(50, 0.15 + 0.1 * uniform01(rng), 0.7 + 0.1 * uniform01(rng), 0.05, rng);
        const auto fit = fit_gmm_1d(x);
        const double em = reference_ll(x, fit.params);
        double best = -1e300;
        GmmParams g = fit.params;
        for (int a = 0; a <= 500; ++a) {
            for (int b = a; b <= 500; ++b) {
                g.means[0] = a * 0.002;
                g.means[1] = b * 0.002;
                best = std::max(best, reference_ll(x, g));
            }
        }
        CHECK(em >= best - 1e-3);
        // Generating parameters as a second reference point.
        GmmParams truth = fit.params;
        truth.variances[0] = truth.variances[1] = 0.05 * 0.05;
        truth.weights[0] = truth.weights[1] = 0.5;
        CHECK(em >= reference_ll(x, truth) - 1e-3);
    }
}

TEST_CASE("gmm input errors") {
    CHECK_THROWS_AS(fit_gmm_1d(std::vector<double>{0.1, 0.2, 0.3}), ParameterError);
    CHECK_THROWS_AS(fit_gmm_1d(std::vector<double>(10, 0.4)), DegeneracyError);
    // Two distinct values: the floor keeps everything finite.
    std::vector<double> two(20, 0.0);
    std::fill(two.begin() + 10, two.end(), 1.0);
    const auto fit = fit_gmm_1d(two);
    CHECK(std::isfinite(fit.log_likelihood.back()));
    CHECK(std::isfinite(posterior_clean(0.5, fit.params)));
}

TEST_CASE("posterior of the clean component") {
    GmmParams g;
    g.means[0] = 0.1;
    g.means[1] = 0.8;
    g.variances[0] = g.variances[1] = 0.01;
    CHECK(posterior_clean(0.1, g) > 0.99);
    CHECK(posterior_clean(0.8, g) < 0.01);
    // Closed form for equal weights and variances: logistic in the distance ratio.
    const double x = 0.4;
    const double expected = 1.0 / (1.0 + std::exp(((x - 0.1) * (x - 0.1) - (x - 0.8) * (x - 0.8)) / 0.02));
    CHECK(posterior_clean(x, g) == doctest::Approx(expected).epsilon(1e-12));

    double prev = 1.0;
    for (int k = 0; k <= 200; ++k) {
        const double p = posterior_clean(-0.5 + k * 0.01, g);
        CHECK(p <= prev);
        CHECK(p >= 0.0);
        CHECK(p <= 1.0);
        prev = p;
    }

    GmmParams flat;
    flat.means[0] = flat.means[1] = 0.3;
    for (double v : {-1.0, 0.0, 0.3, 2.0}) CHECK(posterior_clean(v, flat) == 0.5);

    GmmParams tight = g;
    tight.variances[0] = tight.variances[1] = 1e-6;
    for (double v : {-1e6, -3.0, 0.45, 5.0, 1e6}) CHECK(std::isfinite(posterior_clean(v, tight)));
}

TEST_CASE("split boundaries and partition") {
    auto rng = make_rng({74});
    const auto probs = testing::random_simplex(3, 6, rng);
    const std::vector<double> p{0.2, 0.9, 0.5, 0.49, 0.999, 0.01};

    const auto all_clean = split(synthetic_posterior(p, 1e-9), probs);
    CHECK(all_clean.noisy_ids.empty());
    CHECK(all_clean.predicted_noise_rate == 0.0);

    const auto all_noisy = split(synthetic_posterior(p, 1.0 - 1e-9), probs);
    CHECK(all_noisy.clean_ids.empty());
    CHECK(all_noisy.predicted_noise_rate == 1.0);

    const auto half = split(synthetic_posterior(p, 0.5), probs);
    CHECK(half.clean_ids == std::vector<std::size_t>{1, 2, 4});
    CHECK(half.noisy_ids == std::vector<std::size_t>{0, 3, 5});
    CHECK(half.predicted_noise_rate == 0.5);
    CHECK(half.noisy_targets.col(1) == probs.col(3));
    half.validate(6);

    CHECK_THROWS_AS(split(synthetic_posterior(p, 0.0), probs), ParameterError);
    CHECK_THROWS_AS(split(synthetic_posterior(p, 1.0), probs), ParameterError);
    CHECK_THROWS_AS(split(synthetic_posterior(p, 0.5), probs.leftCols(5)), ParameterError);

    DividedData broken = half;
    broken.noisy_ids[0] = 1;
    CHECK_THROWS_AS(broken.validate(6), ParameterError);
}

TEST_CASE("divide separates low and high losses") {
    auto rng = make_rng({75});
    const int n = 400;
    Eigen::MatrixXd probs(2, n);
    std::vector<int> labels(n, 0);
    std::set<std::size_t> noisy;
    for (int i = 0; i < n; ++i) {
        const bool is_noisy = i % 4 == 0;
        const double p0 = is_noisy ? 0.05 + 0.1 * uniform01(rng) : 0.85 + 0.1 * uniform01(rng);
        probs(0, i) = p0;
        probs(1, i) = 1.0 - p0;
        if (is_noisy) noisy.insert(static_cast<std::size_t>(i));
    }
    const auto out = divide(probs, labels, 0.5);
    CHECK_FALSE(out.degenerate);
    out.divided.validate(n);
    CHECK(std::set<std::size_t>(out.divided.noisy_ids.begin(), out.divided.noisy_ids.end()) == noisy);
    CHECK(out.divided.predicted_noise_rate == doctest::Approx(0.25));
    for (Eigen::Index k = 0; k < out.divided.noisy_targets.cols(); ++k) {
        CHECK(out.divided.noisy_targets.col(k).sum() == doctest::Approx(1.0));
    }
    CHECK(*std::min_element(out.posterior.losses.begin(), out.posterior.losses.end()) == 0.0);
    CHECK(*std::max_element(out.posterior.losses.begin(), out.posterior.losses.end()) == 1.0);
}

TEST_CASE("divide keeps everything on constant losses") {
    const Eigen::MatrixXd probs = Eigen::MatrixXd::Constant(4, 10, 0.25);
    const auto out = divide(probs, std::vector<int>(10, 2), 0.5);
    CHECK(out.degenerate);
    CHECK(out.divided.clean_ids.size() == 10);
    CHECK(out.divided.predicted_noise_rate == 0.0);
}

TEST_CASE("divide dump") {
    testing::TempDir dir;
    const auto post = synthetic_posterior({0.9, 0.1, 0.5}, 0.5);
    save_divide_dump(dir / "d.csv", post, std::vector<int>{0, 1, 2}, std::vector<int>{0, 2, 2});
    const auto text = io::read_file(dir / "d.csv");
    CHECK(text.rfind("sample_id,loss,p_clean,is_truly_clean\n", 0) == 0);
    CHECK(text.find("\n1,0.5,0.1,0\n") != std::string::npos);
    CHECK(text.find("\n2,0.5,0.5,1\n") != std::string::npos);
    CHECK_THROWS_AS(save_divide_dump(dir / "e.csv", post, std::vector<int>{0}, std::vector<int>{0}), ParameterError);
}
