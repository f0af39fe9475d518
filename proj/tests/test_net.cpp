#include <doctest.h>

#include <cmath>
#include <fstream>
#include <limits>

#include "scanmix/errors.hpp"
#include "scanmix/losses.hpp"
#include "scanmix/net.hpp"
#include "support.hpp"

using namespace scanmix;

namespace {

Architecture tiny_arch() {
    Architecture a;
    a.input_dim = 2;
    a.hidden = {2};
    a.feature_dim = 2;
    a.class_count = 2;
    a.projection_dim = 2;
    return a;
}

ModelParams all_ones(const Architecture& a) {
    auto p = ModelParams::zeros(a);
    p.layers.for_each([](const std::string& name, auto& t) {
        if (name.find("weight") != std::string::npos) t.setOnes();
    });
    return p;
}

}  // namespace

TEST_CASE("zero parameters give the uniform distribution") {
    const auto p = ModelParams::zeros(testing::small_arch(3, 5));
    auto rng = make_rng({1});
    const auto probs = predict(p, testing::random_matrix(3, 7, rng));
    CHECK((probs.array() - 0.2).abs().maxCoeff() < 1e-15);
}

TEST_CASE("probabilities stay on the simplex") {
    auto rng = make_rng({2});
    for (int k = 0; k < 50; ++k) {
        const auto p = testing::random_params(testing::small_arch(3, 4), 100 + k);
        const auto probs = predict(p, testing::random_matrix(3, 9, rng, 1e3));
        CHECK((probs.array() >= 0.0).all());
        CHECK((probs.colwise().sum().array() - 1.0).abs().maxCoeff() < 1e-6);
    }
    const Eigen::MatrixXd extreme = (Eigen::MatrixXd(3, 1) << 800.0, -800.0, 0.0).finished();
    const auto s = softmax(extreme);
    CHECK(s.allFinite());
    CHECK(s(0, 0) == doctest::Approx(1.0));
}

TEST_CASE("hand-evaluated 2-2-2 network") {
    auto p = all_ones(tiny_arch());
    const Eigen::Vector2d x(1.0, 0.0);
    // hidden relu(1, 1) -> features (2, 2) -> logits (4, 4).
    auto trace = forward(p, x);
    CHECK(trace.features()(0, 0) == 2.0);
    CHECK(trace.logits(0, 0) == 4.0);
    CHECK(std::abs(trace.probs(0, 0) - 0.5) < 1e-9);

    p.layers.head.back().weight << 1.0, 0.0, 0.0, 2.0;  // logits (2, 4)
    trace = forward(p, x);
    const double e2 = std::exp(2.0);
    CHECK(std::abs(trace.probs(0, 0) - 1.0 / (1.0 + e2)) < 1e-9);
    CHECK(std::abs(trace.probs(1, 0) - e2 / (1.0 + e2)) < 1e-9);

    p.layers.encoder.front().weight << -1.0, 0.0, 1.0, 0.0;  // hidden relu(-1, 1) = (0, 1)
    trace = forward(p, x);
    CHECK(trace.encoder_act.front()(0, 0) == 0.0);
    CHECK(trace.features()(0, 0) == 1.0);
}

TEST_CASE("forward errors") {
    const auto p = ModelParams::init(testing::small_arch(3, 4), 1);
    CHECK_THROWS_AS(forward(p, Eigen::MatrixXd::Zero(2, 4)), ParameterError);
    Eigen::MatrixXd bad = Eigen::MatrixXd::Zero(3, 2);
    bad(1, 1) = std::numeric_limits<double>::quiet_NaN();
    CHECK_THROWS_AS(forward(p, bad), NumericError);
    bad(1, 1) = std::numeric_limits<double>::infinity();
    CHECK_THROWS_AS(forward(p, bad), NumericError);
}

TEST_CASE("forward is deterministic") {
    const auto p = testing::random_params(testing::small_arch(), 4);
    auto rng = make_rng({3});
    const auto x = testing::random_matrix(3, 11, rng);
    const auto a = forward(p, x, true);
    const auto b = forward(p, x, true);
    CHECK(a.probs == b.probs);
    CHECK(a.projection == b.projection);
}

TEST_CASE("init is seeded and fan-in scaled") {
    const auto a = testing::small_arch(3, 4);
    CHECK(ModelParams::init(a, 9).layers.flatten() == ModelParams::init(a, 9).layers.flatten());
    CHECK(ModelParams::init(a, 9).layers.flatten() != ModelParams::init(a, 10).layers.flatten());
    const auto p = ModelParams::init(a, 9);
    CHECK(p.layers.encoder.front().weight.cwiseAbs().maxCoeff() <= std::sqrt(6.0 / 3.0));
    CHECK(p.layers.encoder.front().bias.isZero());
    p.validate();
    auto broken = p;
    broken.layers.head.front().weight.resize(2, 2);
    CHECK_THROWS_AS(broken.validate(), ParameterError);
}

TEST_CASE("param tree flatten round trip") {
    const auto p = testing::random_params(testing::small_arch(), 5);
    auto q = ModelParams::zeros(p.arch);
    q.layers.unflatten(p.layers.flatten());
    CHECK(q.layers.flatten() == p.layers.flatten());
    CHECK(static_cast<std::size_t>(p.layers.flatten().size()) == p.layers.parameter_count());
    CHECK_THROWS_AS(q.layers.unflatten(Eigen::VectorXd::Zero(3)), ParameterError);
}

TEST_CASE("backward: zero upstream gives a zero bundle") {
    const auto p = testing::random_params(testing::small_arch(), 6);
    auto rng = make_rng({4});
    const auto trace = forward(p, testing::random_matrix(3, 5, rng), true);
    const auto g = backward(p, trace, Upstream{Eigen::MatrixXd::Zero(4, 5), {}, {}});
    CHECK(g.flatten().isZero());
    CHECK(backward(p, trace, Upstream{}).flatten().isZero());
    CHECK_THROWS_AS(backward(p, trace, Upstream{Eigen::MatrixXd::Zero(3, 5), {}, {}}), ParameterError);
}

TEST_CASE("cross-entropy at the softmax gives probs minus onehot") {
    const Eigen::Vector3d logits(0.3, -1.2, 2.0);
    const Eigen::MatrixXd p = softmax(logits);
    const Eigen::Vector3d y(0.0, 1.0, 0.0);
    const Eigen::MatrixXd g = softmax_backward(p, (-y.array() / p.array()).matrix());
    CHECK((g - (p - y)).cwiseAbs().maxCoeff() < 1e-9);
}

TEST_CASE("backward matches finite differences") {
    auto rng = make_rng({5});
    for (int trial = 0; trial < 20; ++trial) {
        auto arch = testing::small_arch(3, 4);
        arch.hidden = {6, 5};
        const auto p = testing::random_params(arch, 200 + trial);
        const auto x = testing::random_matrix(3, 6, rng);
        const auto a = testing::random_matrix(4, 6, rng);
        const auto b = testing::random_matrix(4, 6, rng);
        const auto c = testing::random_matrix(3, 6, rng);
        auto loss = [&](const ModelParams& q) {
            const auto t = forward(q, x, true);
            return (a.array() * t.probs.array()).sum() + (b.array() * t.features().array()).sum() +
                   (c.array() * t.projection.array()).sum();
        };
        const auto trace = forward(p, x, true);
        const auto grads = backward(p, trace, Upstream{a, b, c});
        const auto report = finite_diff_check(p, loss, grads, 1e-4);
        CHECK_MESSAGE(report.passed, "worst " << report.worst_tensor << " " << report.max_rel_error);
    }
}

TEST_CASE("sgd_step") {
    const auto p0 = testing::random_params(testing::small_arch(), 7);
    auto g = p0.layers.zeros_like();
    auto rng = make_rng({6});
    g.unflatten(testing::random_matrix(static_cast<Eigen::Index>(g.parameter_count()), 1, rng));

    auto p = p0;
    auto state = p.layers.zeros_like();
    sgd_step(p, g, 0.0, state, 0.9, 0.1);
    CHECK(p.layers.flatten() == p0.layers.flatten());

    p = p0;
    state = p.layers.zeros_like();
    const ParamGroups all{true, true, true};
    sgd_step(p, g, 0.1, state, 0.0, 0.0, all);
    CHECK(p.layers.flatten() == p0.layers.flatten() - 0.1 * g.flatten());

    p = p0;
    state = p.layers.zeros_like();
    sgd_step(p, g, 0.1, state, 0.9, 0.0, all);
    sgd_step(p, g, 0.1, state, 0.9, 0.0, all);
    CHECK((p.layers.flatten() - (p0.layers.flatten() - 0.1 * 2.9 * g.flatten())).cwiseAbs().maxCoeff() < 1e-14);

    // Weight decay adds wd * theta to the gradient.
    p = p0;
    state = p.layers.zeros_like();
    sgd_step(p, g, 0.1, state, 0.0, 0.01, all);
    CHECK((p.layers.flatten() - (p0.layers.flatten() - 0.1 * (g.flatten() + 0.01 * p0.layers.flatten())))
              .cwiseAbs()
              .maxCoeff() < 1e-15);

    // Only the selected stacks move.
    p = p0;
    state = p.layers.zeros_like();
    sgd_step(p, g, 0.1, state, 0.9, 0.0, ParamGroups{false, true, false});
    CHECK(p.layers.encoder.front().weight == p0.layers.encoder.front().weight);
    CHECK(p.layers.projection.front().weight == p0.layers.projection.front().weight);
    CHECK(p.layers.head.front().weight != p0.layers.head.front().weight);

    auto wrong = ModelParams::zeros(testing::small_arch(2, 4)).layers;
    CHECK_THROWS_AS(sgd_step(p, wrong, 0.1, state, 0.9, 0.0), ParameterError);
}

TEST_CASE("finite_diff_check self-tests") {
    const auto p = testing::random_params(testing::small_arch(), 8);
    auto c = p.layers.zeros_like();
    auto rng = make_rng({7});
    c.unflatten(testing::random_matrix(static_cast<Eigen::Index>(c.parameter_count()), 1, rng));
    const Eigen::VectorXd cv = c.flatten();
    const auto linear = finite_diff_check(p, [&](const ModelParams& q) { return cv.dot(q.layers.flatten()); }, c, 1e-4);
    CHECK(linear.passed);
    CHECK(linear.max_abs_error < 1e-8);

    // The balance term of the classification loss alone.
    MixConfig mix;
    mix.lambda_u = 0.0;
    mix.lambda_r = 1.0;
    MixedBatch batch;
    batch.x_inputs.resize(3, 0);
    batch.x_targets.resize(4, 0);
    batch.u_inputs = testing::random_matrix(3, 8, rng);
    batch.u_targets = testing::random_simplex(4, 8, rng);
    const auto r = loss_mle(p, batch, mix);
    const auto report =
        finite_diff_check(p, [&](const ModelParams& q) { return loss_mle(q, batch, mix).value; }, r.grads, 1e-4);
    CHECK(report.passed);
    CHECK(r.value == doctest::Approx(r.loss_r));

    auto corrupted = r.grads;
    corrupted.head.front().weight(0, 0) += 0.5;
    const auto bad =
        finite_diff_check(p, [&](const ModelParams& q) { return loss_mle(q, batch, mix).value; }, corrupted, 1e-4);
    CHECK_FALSE(bad.passed);
    CHECK(bad.worst_tensor == "head.0.weight");
}

TEST_CASE("checkpoint round trip and format errors") {
    testing::TempDir dir;
    Checkpoint cp;
    cp.params = testing::random_params(testing::small_arch(), 9);
    cp.aux["momentum"] = testing::random_params(testing::small_arch(), 10).layers;
    cp.meta = {{"next_epoch", 4}};
    save_checkpoint(dir / "c.bin", cp);
    const auto back = load_checkpoint(dir / "c.bin");
    CHECK(back.params.arch == cp.params.arch);
    CHECK(back.params.layers.flatten() == cp.params.layers.flatten());
    CHECK(back.aux.at("momentum").flatten() == cp.aux.at("momentum").flatten());
    CHECK(back.meta["next_epoch"] == 4);

    save_model(dir / "m.bin", cp.params);
    CHECK(load_model(dir / "m.bin").layers.flatten() == cp.params.layers.flatten());

    {
        std::ofstream trunc(dir / "m.bin", std::ios::binary | std::ios::trunc);
        trunc << "1234";
    }
    CHECK_THROWS_AS(load_model(dir / "m.bin"), FormatError);
    {
        std::ofstream bad(dir / "c.bin.json", std::ios::trunc);
        bad << "{\"format\": \"other\"}";
    }
    CHECK_THROWS_AS(load_checkpoint(dir / "c.bin"), FormatError);
    CHECK_THROWS(load_model(dir / "nothing.bin"));
}
