#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

namespace scanmix {

/// Layer sizes of the encoder f_phi, classification head p_psi and the
/// contrastive projection head.
struct Architecture {
    int input_dim = 2;
    std::vector<int> hidden = {64};
    int feature_dim = 16;
    int class_count = 2;
    int projection_dim = 32;

    void validate() const;
    bool operator==(const Architecture&) const = default;
};

struct Layer {
    Eigen::MatrixXd weight;  // out x in
    Eigen::VectorXd bias;    // out
};

/// The three layer stacks of the model. Used both for parameters and for
/// anything shape-congruent with them (gradients, momentum buffers).
struct ParamTree {
    std::vector<Layer> encoder;
    std::vector<Layer> head;
    std::vector<Layer> projection;

    std::size_t parameter_count() const;
    ParamTree zeros_like() const;
    bool same_shape(const ParamTree& other) const;

    Eigen::VectorXd flatten() const;
    void unflatten(const Eigen::Ref<const Eigen::VectorXd>& flat);

    ParamTree& operator+=(const ParamTree& other);
    ParamTree& operator*=(double s);

    /// Calls fn(name, tensor) for every weight and bias, in a fixed order.
    template <class F>
    void for_each(F&& fn);
    template <class F>
    void for_each(F&& fn) const;
};

using GradientBundle = ParamTree;
using MomentumState = ParamTree;

/// theta = {psi, phi} plus the projection head used only for pre-training.
struct ModelParams {
    Architecture arch;
    ParamTree layers;

    /// Kaiming-style uniform fan-in initialisation, zero biases.
    static ModelParams init(const Architecture& arch, std::uint64_t seed);
    /// All weights and biases zero.
    static ModelParams zeros(const Architecture& arch);

    /// Throws ParameterError when the layer shapes do not compose.
    void validate() const;
};

/// Activations for a batch; one column per sample.
struct ForwardTrace {
    Eigen::MatrixXd input;
    std::vector<Eigen::MatrixXd> encoder_pre;
    std::vector<Eigen::MatrixXd> encoder_act;
    Eigen::MatrixXd logits;
    Eigen::MatrixXd probs;
    Eigen::MatrixXd projection;  // empty unless requested

    const Eigen::MatrixXd& features() const { return encoder_act.back(); }
    Eigen::Index batch_size() const { return input.cols(); }
};

/// Upstream gradients of a scalar loss. Empty matrices count as zero.
struct Upstream {
    Eigen::MatrixXd probs;
    Eigen::MatrixXd features;
    Eigen::MatrixXd projection;
};

/// Selects which stacks an optimiser step touches.
struct ParamGroups {
    bool encoder = true;
    bool head = true;
    bool projection = false;
};

ForwardTrace forward(const ModelParams& params, const Eigen::Ref<const Eigen::MatrixXd>& inputs,
                     bool with_projection = false);

/// Class probabilities only.
Eigen::MatrixXd predict(const ModelParams& params, const Eigen::Ref<const Eigen::MatrixXd>& inputs);

/// Exact gradients of the traced composition.
GradientBundle backward(const ModelParams& params, const ForwardTrace& trace, const Upstream& upstream);

/// p .* (g - p^T g), column-wise.
Eigen::MatrixXd softmax_backward(const Eigen::MatrixXd& probs, const Eigen::MatrixXd& grad_probs);

/// Column-wise softmax with max subtraction.
Eigen::MatrixXd softmax(const Eigen::MatrixXd& logits);

/// v <- momentum * v + (g + weight_decay * theta); theta <- theta - lr * v.
void sgd_step(ModelParams& params, const GradientBundle& grads, double lr, MomentumState& state,
              double momentum, double weight_decay, ParamGroups groups = {});

struct FiniteDiffReport {
    double max_rel_error = 0.0;
    double max_abs_error = 0.0;
    std::string worst_tensor;
    std::map<std::string, double> per_tensor_rel_error;
    bool passed = false;
};

/// Compares an analytic gradient with central differences of loss_fn.
/// Relative error per entry is |a - n| / max(|a|, |n|, 1e-6).
FiniteDiffReport finite_diff_check(const ModelParams& params,
                                   const std::function<double(const ModelParams&)>& loss_fn,
                                   const GradientBundle& analytic, double tolerance,
                                   double step = 1e-5);

struct Checkpoint {
    ModelParams params;
    std::map<std::string, ParamTree> aux;  // e.g. optimiser momentum
    nlohmann::json meta = nlohmann::json::object();
};

/// Writes `path` (flat little-endian float64) and `path.json` (shape manifest).
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint);
void save_model(const std::filesystem::path& path, const ModelParams& params);
Checkpoint load_checkpoint(const std::filesystem::path& path);
ModelParams load_model(const std::filesystem::path& path);

// --- implementation of the visitor templates ---

namespace detail {
template <class Tree, class F>
void visit_layers(Tree& tree, F& fn) {
    auto visit = [&](auto& stack, const char* prefix) {
        for (std::size_t l = 0; l < stack.size(); ++l) {
            const std::string base = std::string(prefix) + "." + std::to_string(l);
            fn(base + ".weight", stack[l].weight);
            fn(base + ".bias", stack[l].bias);
        }
    };
    visit(tree.encoder, "encoder");
    visit(tree.head, "head");
    visit(tree.projection, "projection");
}
}  // namespace detail

template <class F>
void ParamTree::for_each(F&& fn) {
    detail::visit_layers(*this, fn);
}

template <class F>
void ParamTree::for_each(F&& fn) const {
    detail::visit_layers(*this, fn);
}

}  // namespace scanmix
