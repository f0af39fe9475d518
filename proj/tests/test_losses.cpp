#include <doctest.h>

#include <cmath>
#include <set>

#include "scanmix/errors.hpp"
#include "scanmix/losses.hpp"
#include "support.hpp"

using namespace scanmix;

namespace {

CleanBatch random_clean(int dim, int classes, int n, Rng& rng) {
    CleanBatch b;
    b.inputs = testing::random_matrix(dim, n, rng);
    b.labels = Eigen::MatrixXd::Zero(classes, n);
    b.weights.resize(n);
    for (int i = 0; i < n; ++i) {
        b.labels(static_cast<Eigen::Index>(uniform_index(rng, static_cast<std::size_t>(classes))), i) = 1.0;
        b.weights(i) = uniform01(rng);
    }
    return b;
}

NoisyBatch random_noisy(int dim, int classes, int n, Rng& rng) {
    return {testing::random_matrix(dim, n, rng), testing::random_simplex(classes, n, rng)};
}

/// Predictions fixed at one class for every input: a large head bias.
ModelParams constant_predictor(const Architecture& arch, int cls) {
    auto p = ModelParams::zeros(arch);
    p.layers.head.back().bias(cls) = 60.0;
    return p;
}

NeighborIndex ring_index(std::size_t n, std::size_t k) {
    NeighborIndex idx;
    idx.neighbor_ids.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t d = 1; d <= k; ++d) idx.neighbor_ids[i].push_back((i + d) % n);
    }
    return idx;
}

}  // namespace

// --- estimate_q -------------------------------------------------------------

TEST_CASE("estimate_q extremes") {
    const auto knn = ring_index(6, 2);
    const Eigen::MatrixXd same = Eigen::MatrixXd::Constant(3, 6, 1.0 / 3.0);
    CHECK(estimate_q(same, knn).pair_count() == 12);

    const Eigen::MatrixXd distinct = Eigen::MatrixXd::Identity(6, 6);
    CHECK(estimate_q(distinct, knn).pair_count() == 0);
    CHECK_THROWS_AS(estimate_q(Eigen::MatrixXd::Identity(6, 5), knn), ParameterError);
}

TEST_CASE("estimate_q on a hand case matches enumeration") {
    // Argmax classes: 0, 0, 1, 1, 0 (sample 4 ties 0 and 1 and takes 0).
    const Eigen::MatrixXd p = (Eigen::MatrixXd(2, 5) << 0.9, 0.6, 0.2, 0.1, 0.5,  //
                               0.1, 0.4, 0.8, 0.9, 0.5)
                                  .finished();
    NeighborIndex knn;
    knn.neighbor_ids = {{1, 2}, {0, 4}, {3, 1}, {2, 4}, {0, 3}};
    const auto q = estimate_q(p, knn);
    const std::vector<int> cls{0, 0, 1, 1, 0};
    std::size_t expected = 0;
    for (std::size_t i = 0; i < 5; ++i) {
        for (auto j : knn.neighbor_ids[i]) {
            const bool agree = cls[i] == cls[j];
            CHECK(q.contains(i, j) == agree);
            expected += agree;
        }
    }
    CHECK(q.pair_count() == expected);
    CHECK(q.pairs[0] == std::vector<std::size_t>{1});
    CHECK(q.pairs[4] == std::vector<std::size_t>{0});
}

TEST_CASE("estimate_q is argmax-invariant") {
    auto rng = make_rng({31});
    const auto knn = ring_index(40, 5);
    for (int trial = 0; trial < 20; ++trial) {
        const auto p = testing::random_simplex(4, 40, rng);
        const Eigen::MatrixXd warped = (3.0 * p.array()).exp() - 0.5;
        CHECK(estimate_q(p, knn).pairs == estimate_q(warped, knn).pairs);
    }
    CHECK(argmax(Eigen::Vector3d(0.4, 0.4, 0.2)) == 0);
}

// --- mixmatch ---------------------------------------------------------------

TEST_CASE("mixmatch with lambda forced to one returns the anchors") {
    auto rng = make_rng({32});
    const auto p = testing::random_params(testing::small_arch(3, 4), 1);
    const auto clean = random_clean(3, 4, 5, rng);
    const auto noisy = random_noisy(3, 4, 5, rng);
    MixConfig config;
    const auto batch = mixmatch(clean, noisy, p, AugmentationPolicy{}, config, rng, 1.0);
    CHECK(batch.mix_coefficient == 1.0);
    REQUIRE(batch.x_inputs.cols() == 10);
    REQUIRE(batch.u_inputs.cols() == 10);
    CHECK(batch.x_inputs.leftCols(5) == clean.inputs);
    CHECK(batch.x_inputs.rightCols(5) == clean.inputs);
    CHECK(batch.u_inputs.leftCols(5) == noisy.inputs);

    // Co-refined clean targets: sharpen(w y + (1 - w) p).
    const Eigen::MatrixXd pred = predict(p, clean.inputs);
    Eigen::MatrixXd refined(4, 5);
    for (int c = 0; c < 5; ++c) refined.col(c) = clean.weights(c) * clean.labels.col(c) + (1 - clean.weights(c)) * pred.col(c);
    CHECK((batch.x_targets.leftCols(5) - sharpen(refined, 0.5)).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("mixmatch reduces to the model prediction for noisy targets") {
    auto rng = make_rng({33});
    const auto p = testing::random_params(testing::small_arch(3, 4), 2);
    const auto clean = random_clean(3, 4, 4, rng);
    const auto noisy = random_noisy(3, 4, 6, rng);
    MixConfig config;
    config.sharpen_t = 1.0;
    config.num_augments = 1;
    const auto batch = mixmatch(clean, noisy, p, AugmentationPolicy{}, config, rng, 1.0);
    CHECK((batch.u_targets - predict(p, noisy.inputs)).cwiseAbs().maxCoeff() < 1e-12);

    // Without re-guessing the stored y* is used verbatim.
    config.reguess_noisy = false;
    const auto kept = mixmatch(clean, noisy, p, AugmentationPolicy{}, config, rng, 1.0);
    CHECK(kept.u_targets == noisy.targets);
}

TEST_CASE("mixmatch outputs stay on the simplex") {
    auto rng = make_rng({34});
    const auto p = testing::random_params(testing::small_arch(3, 4), 3);
    const AugmentationPolicy policy{0.1, 0.9, 1.1, {true, false, false}};
    MixConfig config;
    std::size_t targets = 0;
    for (int trial = 0; trial < 1000; ++trial) {
        const auto batch = mixmatch(random_clean(3, 4, 3, rng), random_noisy(3, 4, 2, rng), p, policy, config, rng);
        CHECK(batch.mix_coefficient >= 0.5);
        CHECK(batch.mix_coefficient <= 1.0);
        for (const auto* t : {&batch.x_targets, &batch.u_targets}) {
            CHECK((t->array() >= 0.0).all());
            CHECK((t->colwise().sum().array() - 1.0).abs().maxCoeff() < 1e-12);
            targets += static_cast<std::size_t>(t->cols());
        }
    }
    CHECK(targets >= 10000);
}

TEST_CASE("mixmatch edge cases") {
    auto rng = make_rng({35});
    const auto p = testing::random_params(testing::small_arch(3, 4), 4);
    MixConfig config;
    CleanBatch empty;
    empty.inputs.resize(3, 0);
    empty.labels.resize(4, 0);
    CHECK_THROWS_AS(mixmatch(empty, random_noisy(3, 4, 2, rng), p, {}, config, rng), ParameterError);

    NoisyBatch none;
    none.inputs.resize(3, 0);
    none.targets.resize(4, 0);
    const auto batch = mixmatch(random_clean(3, 4, 3, rng), none, p, {}, config, rng);
    CHECK(batch.u_inputs.cols() == 0);
    CHECK(batch.x_inputs.cols() == 6);
    CHECK(loss_mle(p, batch, config).loss_u == 0.0);

    config.alpha = 0.0;
    CHECK_THROWS_AS(mixmatch(random_clean(3, 4, 3, rng), none, p, {}, config, rng), ParameterError);
}

// --- loss_mle ---------------------------------------------------------------

TEST_CASE("loss_mle is zero for perfect, balanced predictions") {
    Architecture a = testing::small_arch(2, 2);
    a.hidden = {2};
    a.feature_dim = 2;
    auto p = ModelParams::zeros(a);
    p.layers.encoder[0].weight.setIdentity();
    p.layers.encoder[1].weight.setIdentity();
    p.layers.head[0].weight = 40.0 * Eigen::Matrix2d::Identity();
    MixedBatch batch;
    batch.x_inputs = Eigen::Matrix2d::Identity();
    batch.x_targets = Eigen::Matrix2d::Identity();
    batch.u_inputs.resize(2, 0);
    batch.u_targets.resize(2, 0);
    const auto r = loss_mle(p, batch, MixConfig{});
    CHECK(r.loss_x <= 1e-6);
    CHECK(r.loss_u == 0.0);
    CHECK(r.loss_r <= 1e-6);
    CHECK(r.value <= 1e-6);
}

TEST_CASE("loss_mle identities") {
    auto rng = make_rng({36});
    // Uniform predictions: the balance term vanishes.
    const auto zero = ModelParams::zeros(testing::small_arch(3, 4));
    MixedBatch batch;
    batch.x_inputs = testing::random_matrix(3, 5, rng);
    batch.x_targets = testing::random_simplex(4, 5, rng);
    batch.u_inputs = testing::random_matrix(3, 3, rng);
    batch.u_targets = testing::random_simplex(4, 3, rng);
    CHECK(std::abs(loss_mle(zero, batch, MixConfig{}).loss_r) < 1e-15);

    // No U' and no balance term: plain mean cross-entropy on X'.
    const auto p = testing::random_params(testing::small_arch(3, 4), 5);
    batch.u_inputs.resize(3, 0);
    batch.u_targets.resize(4, 0);
    MixConfig config;
    config.lambda_r = 0.0;
    const Eigen::MatrixXd probs = predict(p, batch.x_inputs);
    const double ce = -(batch.x_targets.array() * probs.array().log()).sum() / 5.0;
    CHECK(loss_mle(p, batch, config).value == doctest::Approx(ce).epsilon(1e-12));
}

TEST_CASE("loss_mle terms are non-negative and gradients match finite differences") {
    auto rng = make_rng({37});
    for (int trial = 0; trial < 20; ++trial) {
        const auto p = testing::random_params(testing::small_arch(3, 4), 300 + trial);
        MixedBatch batch;
        batch.x_inputs = testing::random_matrix(3, 6, rng);
        batch.x_targets = testing::random_simplex(4, 6, rng);
        batch.u_inputs = testing::random_matrix(3, 4, rng);
        batch.u_targets = testing::random_simplex(4, 4, rng);
        MixConfig config;
        config.lambda_u = uniform(rng, 0.5, 30.0);
        config.lambda_r = uniform(rng, 0.5, 2.0);
        const auto r = loss_mle(p, batch, config);
        CHECK(r.loss_x >= 0.0);
        CHECK(r.loss_u >= 0.0);
        CHECK(r.loss_r >= 0.0);
        CHECK(r.value == doctest::Approx(r.loss_x + config.lambda_u * r.loss_u + config.lambda_r * r.loss_r));
        const auto report = finite_diff_check(
            p, [&](const ModelParams& q) { return loss_mle(q, batch, config).value; }, r.grads, 1e-4);
        CHECK_MESSAGE(report.passed, report.worst_tensor << " " << report.max_rel_error);
    }
}

// --- warmup_loss ------------------------------------------------------------

TEST_CASE("warmup_loss values and gradients") {
    const Architecture a = testing::small_arch(3, 4);
    auto rng = make_rng({38});
    const auto x = testing::random_matrix(3, 6, rng);
    const std::vector<int> labels{0, 1, 2, 3, 0, 1};
    CHECK(warmup_loss(ModelParams::zeros(a), x, labels).value == doctest::Approx(std::log(4.0)).epsilon(1e-14));
    const std::vector<int> twos(6, 2);
    CHECK(warmup_loss(constant_predictor(a, 2), x, twos).value <= 1e-7);
    CHECK_THROWS_AS(warmup_loss(ModelParams::zeros(a), x, std::vector<int>{0, 1}), ParameterError);
    CHECK_THROWS_AS(warmup_loss(ModelParams::zeros(a), x, std::vector<int>{0, 1, 2, 3, 4, 0}), ParameterError);

    for (int trial = 0; trial < 20; ++trial) {
        const auto p = testing::random_params(a, 400 + trial);
        const auto xs = testing::random_matrix(3, 7, rng);
        std::vector<int> ys(7);
        for (auto& y : ys) y = static_cast<int>(uniform_index(rng, 4));
        const auto r = warmup_loss(p, xs, ys);
        const auto report =
            finite_diff_check(p, [&](const ModelParams& q) { return warmup_loss(q, xs, ys).value; }, r.grads, 1e-4);
        CHECK_MESSAGE(report.passed, report.worst_tensor << " " << report.max_rel_error);
    }
}

// --- loss_scan --------------------------------------------------------------

TEST_CASE("loss_scan identities") {
    const Architecture a = testing::small_arch(3, 4);
    auto rng = make_rng({39});
    const auto x = testing::random_matrix(3, 12, rng);
    const auto knn = ring_index(12, 3);

    // Identical one-hot predictions for every pair: log 1 = 0.
    const auto onehot = constant_predictor(a, 1);
    const auto q = estimate_q(predict(onehot, x), knn);
    CHECK(q.pair_count() == 36);
    const auto r = loss_scan(onehot, x, knn, q, ScanConfig{});
    CHECK(std::abs(r.loss_n) < 1e-12);

    // Uniform mean prediction: entropy term at its minimum -log 4.
    const auto zero = ModelParams::zeros(a);
    const auto rz = loss_scan(zero, x, knn, estimate_q(predict(zero, x), knn), ScanConfig{});
    CHECK(rz.loss_e == doctest::Approx(-std::log(4.0)).epsilon(1e-14));
    CHECK(rz.loss_n == doctest::Approx(std::log(4.0) * 3.0).epsilon(1e-12));
}

TEST_CASE("loss_scan bounds and gradients") {
    const Architecture a = testing::small_arch(3, 4);
    auto rng = make_rng({40});
    for (int trial = 0; trial < 20; ++trial) {
        const auto p = testing::random_params(a, 500 + trial);
        const auto x = testing::random_matrix(3, 15, rng);
        const auto knn = mine_knn(x, 4);
        // Random q consistent with the index.
        QAssignment q;
        q.pairs.resize(15);
        for (std::size_t i = 0; i < 15; ++i) {
            for (auto j : knn.neighbor_ids[i]) {
                if (uniform01(rng) < 0.6) q.pairs[i].push_back(j);
            }
        }
        std::vector<std::size_t> anchors;
        for (std::size_t i = 0; i < 15; ++i) {
            if (uniform01(rng) < 0.5) anchors.push_back(i);
        }
        if (anchors.empty()) anchors.push_back(0);
        ScanConfig config;
        config.lambda_e = uniform(rng, 0.5, 3.0);
        const auto r = loss_scan(p, x, knn, q, config, anchors);
        CHECK(r.loss_n >= 0.0);
        CHECK(r.loss_e <= 0.0);
        CHECK(r.loss_e >= -std::log(4.0) - 1e-12);
        const auto report = finite_diff_check(
            p, [&](const ModelParams& m) { return loss_scan(m, x, knn, q, config, anchors).value; }, r.grads, 1e-4);
        CHECK_MESSAGE(report.passed, report.worst_tensor << " " << report.max_rel_error);
    }
}

TEST_CASE("loss_scan rejects inconsistent inputs") {
    const Architecture a = testing::small_arch(3, 4);
    auto rng = make_rng({41});
    const auto x = testing::random_matrix(3, 6, rng);
    const auto knn = ring_index(6, 2);
    QAssignment q;
    q.pairs.resize(6);
    q.pairs[0] = {3};  // not a neighbour of 0
    CHECK_THROWS_AS(loss_scan(ModelParams::zeros(a), x, knn, q, ScanConfig{}), ParameterError);
    q.pairs.resize(5);
    CHECK_THROWS_AS(loss_scan(ModelParams::zeros(a), x, knn, q, ScanConfig{}), ParameterError);
    ScanConfig bad;
    bad.lambda_e = -1.0;
    CHECK_THROWS_AS(bad.validate(), ParameterError);
}

TEST_CASE("sharpen") {
    const Eigen::MatrixXd p = (Eigen::MatrixXd(2, 1) << 0.75, 0.25).finished();
    const auto s = sharpen(p, 0.5);
    CHECK(s(0, 0) == doctest::Approx(0.9));
    CHECK(sharpen(p, 1.0).isApprox(p));
}
