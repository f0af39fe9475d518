#include "scanmix/net.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

#include "scanmix/errors.hpp"
#include "scanmix/io.hpp"
#include "scanmix/random.hpp"

namespace scanmix {

void Architecture::validate() const {
    if (input_dim < 1) throw ParameterError("input_dim must be positive");
    if (feature_dim < 1) throw ParameterError("feature_dim must be positive");
    if (class_count < 2) throw ParameterError("class_count must be >= 2");
    if (projection_dim < 1) throw ParameterError("projection_dim must be positive");
    for (int h : hidden) {
        if (h < 1) throw ParameterError("hidden layer sizes must be positive");
    }
}

std::size_t ParamTree::parameter_count() const {
    std::size_t n = 0;
    for_each([&](const std::string&, const auto& t) { n += static_cast<std::size_t>(t.size()); });
    return n;
}

ParamTree ParamTree::zeros_like() const {
    ParamTree out = *this;
    out.for_each([](const std::string&, auto& t) { t.setZero(); });
    return out;
}

bool ParamTree::same_shape(const ParamTree& other) const {
    auto stack_eq = [](const std::vector<Layer>& a, const std::vector<Layer>& b) {
        if (a.size() != b.size()) return false;
        for (std::size_t l = 0; l < a.size(); ++l) {
            if (a[l].weight.rows() != b[l].weight.rows() || a[l].weight.cols() != b[l].weight.cols() ||
                a[l].bias.size() != b[l].bias.size()) {
                return false;
            }
        }
        return true;
    };
    return stack_eq(encoder, other.encoder) && stack_eq(head, other.head) &&
           stack_eq(projection, other.projection);
}

Eigen::VectorXd ParamTree::flatten() const {
    Eigen::VectorXd flat(static_cast<Eigen::Index>(parameter_count()));
    Eigen::Index offset = 0;
    for_each([&](const std::string&, const auto& t) {
        flat.segment(offset, t.size()) = Eigen::Map<const Eigen::VectorXd>(t.data(), t.size());
        offset += t.size();
    });
    return flat;
}

void ParamTree::unflatten(const Eigen::Ref<const Eigen::VectorXd>& flat) {
    if (static_cast<std::size_t>(flat.size()) != parameter_count()) {
        throw ParameterError("unflatten: size mismatch");
    }
    Eigen::Index offset = 0;
    for_each([&](const std::string&, auto& t) {
        Eigen::Map<Eigen::VectorXd>(t.data(), t.size()) = flat.segment(offset, t.size());
        offset += t.size();
    });
}

ParamTree& ParamTree::operator+=(const ParamTree& other) {
    if (!same_shape(other)) throw ParameterError("gradient bundles are not shape-congruent");
    auto add = [](std::vector<Layer>& a, const std::vector<Layer>& b) {
        for (std::size_t l = 0; l < a.size(); ++l) {
            a[l].weight += b[l].weight;
            a[l].bias += b[l].bias;
        }
    };
    add(encoder, other.encoder);
    add(head, other.head);
    add(projection, other.projection);
    return *this;
}

ParamTree& ParamTree::operator*=(double s) {
    for_each([s](const std::string&, auto& t) { t *= s; });
    return *this;
}

namespace {

Layer make_layer(int in, int out, double bound, Rng* rng) {
    Layer layer{Eigen::MatrixXd::Zero(out, in), Eigen::VectorXd::Zero(out)};
    if (rng) {
        for (Eigen::Index c = 0; c < layer.weight.cols(); ++c) {
            for (Eigen::Index r = 0; r < layer.weight.rows(); ++r) {
                layer.weight(r, c) = uniform(*rng, -bound, bound);
            }
        }
    }
    return layer;
}

ModelParams build(const Architecture& arch, Rng* rng) {
    arch.validate();
    ModelParams p;
    p.arch = arch;
    int in = arch.input_dim;
    for (int h : arch.hidden) {
        p.layers.encoder.push_back(make_layer(in, h, std::sqrt(6.0 / in), rng));
        in = h;
    }
    p.layers.encoder.push_back(make_layer(in, arch.feature_dim, std::sqrt(3.0 / in), rng));
    p.layers.head.push_back(
        make_layer(arch.feature_dim, arch.class_count, std::sqrt(3.0 / arch.feature_dim), rng));
    p.layers.projection.push_back(
        make_layer(arch.feature_dim, arch.projection_dim, std::sqrt(3.0 / arch.feature_dim), rng));
    return p;
}

void check_finite(const Eigen::MatrixXd& m, const char* what) {
    if (!m.allFinite()) throw NumericError(std::string("non-finite ") + what);
}

}  // namespace

ModelParams ModelParams::init(const Architecture& arch, std::uint64_t seed) {
    auto rng = make_rng({seed, 0x1417});
    return build(arch, &rng);
}

ModelParams ModelParams::zeros(const Architecture& arch) { return build(arch, nullptr); }

void ModelParams::validate() const {
    arch.validate();
    if (layers.encoder.size() != arch.hidden.size() + 1 || layers.head.size() != 1 ||
        layers.projection.size() != 1) {
        throw ParameterError("layer counts do not match the architecture");
    }
    Eigen::Index in = arch.input_dim;
    for (const auto& l : layers.encoder) {
        if (l.weight.cols() != in || l.bias.size() != l.weight.rows()) {
            throw ParameterError("encoder layer shapes do not compose");
        }
        in = l.weight.rows();
    }
    if (in != arch.feature_dim) throw ParameterError("encoder output != feature_dim");
    const auto& h = layers.head.front();
    if (h.weight.cols() != in || h.weight.rows() != arch.class_count || h.bias.size() != arch.class_count) {
        throw ParameterError("head shape mismatch");
    }
    const auto& pr = layers.projection.front();
    if (pr.weight.cols() != in || pr.weight.rows() != arch.projection_dim ||
        pr.bias.size() != arch.projection_dim) {
        throw ParameterError("projection shape mismatch");
    }
}

Eigen::MatrixXd softmax(const Eigen::MatrixXd& logits) {
    Eigen::MatrixXd out(logits.rows(), logits.cols());
    for (Eigen::Index c = 0; c < logits.cols(); ++c) {
        const double m = logits.col(c).maxCoeff();
        out.col(c) = (logits.col(c).array() - m).exp();
        out.col(c) /= out.col(c).sum();
    }
    return out;
}

Eigen::MatrixXd softmax_backward(const Eigen::MatrixXd& probs, const Eigen::MatrixXd& grad_probs) {
    const Eigen::RowVectorXd dots = (probs.array() * grad_probs.array()).colwise().sum();
    return probs.array() * (grad_probs.rowwise() - dots).array();
}

ForwardTrace forward(const ModelParams& params, const Eigen::Ref<const Eigen::MatrixXd>& inputs,
                     bool with_projection) {
    if (inputs.rows() != params.arch.input_dim) {
        throw ParameterError("forward: input dimension " + std::to_string(inputs.rows()) +
                             " != " + std::to_string(params.arch.input_dim));
    }
    ForwardTrace t;
    t.input = inputs;
    const auto& enc = params.layers.encoder;
    const Eigen::MatrixXd* x = &t.input;
    t.encoder_pre.reserve(enc.size());
    t.encoder_act.reserve(enc.size());
    for (std::size_t l = 0; l < enc.size(); ++l) {
        if (enc[l].weight.cols() != x->rows()) throw ParameterError("forward: layer shape mismatch");
        t.encoder_pre.push_back((enc[l].weight * *x).colwise() + enc[l].bias);
        if (l + 1 < enc.size()) {
            t.encoder_act.push_back(t.encoder_pre.back().cwiseMax(0.0));
        } else {
            t.encoder_act.push_back(t.encoder_pre.back());
        }
        x = &t.encoder_act.back();
    }
    const auto& head = params.layers.head.front();
    t.logits = (head.weight * t.features()).colwise() + head.bias;
    check_finite(t.logits, "logits");
    t.probs = softmax(t.logits);
    if (with_projection) {
        const auto& pr = params.layers.projection.front();
        t.projection = (pr.weight * t.features()).colwise() + pr.bias;
        check_finite(t.projection, "projection");
    }
    return t;
}

Eigen::MatrixXd predict(const ModelParams& params, const Eigen::Ref<const Eigen::MatrixXd>& inputs) {
    return forward(params, inputs).probs;
}

GradientBundle backward(const ModelParams& params, const ForwardTrace& trace, const Upstream& up) {
    GradientBundle g = params.layers.zeros_like();
    const Eigen::Index n = trace.batch_size();
    auto check = [&](const Eigen::MatrixXd& m, Eigen::Index rows, const char* what) {
        if (m.size() != 0 && (m.rows() != rows || m.cols() != n)) {
            throw ParameterError(std::string("backward: upstream ") + what + " shape mismatch");
        }
    };
    check(up.probs, params.arch.class_count, "probs");
    check(up.features, params.arch.feature_dim, "features");
    check(up.projection, params.arch.projection_dim, "projection");
    if (trace.encoder_act.size() != params.layers.encoder.size()) {
        throw ParameterError("backward: trace does not match params");
    }

    Eigen::MatrixXd d_feat = Eigen::MatrixXd::Zero(params.arch.feature_dim, n);
    if (up.features.size() != 0) d_feat += up.features;
    if (up.probs.size() != 0) {
        const Eigen::MatrixXd d_logits = softmax_backward(trace.probs, up.probs);
        const auto& head = params.layers.head.front();
        g.head.front().weight = d_logits * trace.features().transpose();
        g.head.front().bias = d_logits.rowwise().sum();
        d_feat.noalias() += head.weight.transpose() * d_logits;
    }
    if (up.projection.size() != 0) {
        if (trace.projection.size() == 0) throw ParameterError("backward: trace has no projection");
        const auto& pr = params.layers.projection.front();
        g.projection.front().weight = up.projection * trace.features().transpose();
        g.projection.front().bias = up.projection.rowwise().sum();
        d_feat.noalias() += pr.weight.transpose() * up.projection;
    }

    Eigen::MatrixXd d_act = std::move(d_feat);
    const auto& enc = params.layers.encoder;
    for (std::size_t l = enc.size(); l-- > 0;) {
        Eigen::MatrixXd d_pre = std::move(d_act);
        if (l + 1 < enc.size()) {
            d_pre = (trace.encoder_pre[l].array() > 0.0).select(d_pre, 0.0);
        }
        const Eigen::MatrixXd& layer_in = l == 0 ? trace.input : trace.encoder_act[l - 1];
        g.encoder[l].weight = d_pre * layer_in.transpose();
        g.encoder[l].bias = d_pre.rowwise().sum();
        if (l > 0) d_act = enc[l].weight.transpose() * d_pre;
    }
    return g;
}

void sgd_step(ModelParams& params, const GradientBundle& grads, double lr, MomentumState& state,
              double momentum, double weight_decay, ParamGroups groups) {
    if (!params.layers.same_shape(grads)) throw ParameterError("sgd_step: gradient shape mismatch");
    if (!params.layers.same_shape(state)) state = params.layers.zeros_like();
    auto step = [&](std::vector<Layer>& theta, const std::vector<Layer>& g, std::vector<Layer>& v) {
        for (std::size_t l = 0; l < theta.size(); ++l) {
            v[l].weight = momentum * v[l].weight + g[l].weight + weight_decay * theta[l].weight;
            v[l].bias = momentum * v[l].bias + g[l].bias + weight_decay * theta[l].bias;
            theta[l].weight -= lr * v[l].weight;
            theta[l].bias -= lr * v[l].bias;
        }
    };
    if (groups.encoder) step(params.layers.encoder, grads.encoder, state.encoder);
    if (groups.head) step(params.layers.head, grads.head, state.head);
    if (groups.projection) step(params.layers.projection, grads.projection, state.projection);
}

FiniteDiffReport finite_diff_check(const ModelParams& params,
                                   const std::function<double(const ModelParams&)>& loss_fn,
                                   const GradientBundle& analytic, double tolerance, double step) {
    if (!params.layers.same_shape(analytic)) {
        throw ParameterError("finite_diff_check: gradient shape mismatch");
    }
    FiniteDiffReport report;
    ModelParams probe = params;
    std::vector<std::string> names;
    std::vector<Eigen::Index> sizes;
    params.layers.for_each([&](const std::string& name, const auto& t) {
        names.push_back(name);
        sizes.push_back(t.size());
    });
    const Eigen::VectorXd base = params.layers.flatten();
    const Eigen::VectorXd grad = analytic.flatten();
    Eigen::VectorXd x = base;

    Eigen::Index offset = 0;
    for (std::size_t t = 0; t < names.size(); ++t) {
        double worst = 0.0;
        for (Eigen::Index k = offset; k < offset + sizes[t]; ++k) {
            x(k) = base(k) + step;
            probe.layers.unflatten(x);
            const double up = loss_fn(probe);
            x(k) = base(k) - step;
            probe.layers.unflatten(x);
            const double down = loss_fn(probe);
            x(k) = base(k);
            const double numeric = (up - down) / (2.0 * step);
            const double abs_err = std::abs(numeric - grad(k));
            const double rel_err =
                abs_err / std::max({std::abs(numeric), std::abs(grad(k)), 1e-6});
            worst = std::max(worst, rel_err);
            report.max_abs_error = std::max(report.max_abs_error, abs_err);
        }
        report.per_tensor_rel_error[names[t]] = worst;
        if (report.worst_tensor.empty() || worst > report.max_rel_error) {
            report.max_rel_error = worst;
            report.worst_tensor = names[t];
        }
        offset += sizes[t];
    }
    report.passed = report.max_rel_error < tolerance;
    return report;
}

namespace {

nlohmann::json arch_to_json(const Architecture& a) {
    return {{"input_dim", a.input_dim},       {"hidden", a.hidden},
            {"feature_dim", a.feature_dim},   {"class_count", a.class_count},
            {"projection_dim", a.projection_dim}};
}

Architecture arch_from_json(const nlohmann::json& j) {
    Architecture a;
    a.input_dim = j.at("input_dim").get<int>();
    a.hidden = j.at("hidden").get<std::vector<int>>();
    a.feature_dim = j.at("feature_dim").get<int>();
    a.class_count = j.at("class_count").get<int>();
    a.projection_dim = j.at("projection_dim").get<int>();
    return a;
}

constexpr int kCheckpointVersion = 1;

void append_le(std::string& out, double v) {
    auto bits = std::bit_cast<std::uint64_t>(v);
    for (int b = 0; b < 8; ++b) out.push_back(static_cast<char>((bits >> (8 * b)) & 0xff));
}

double read_le(const std::string& in, std::size_t index) {
    std::uint64_t bits = 0;
    for (int b = 0; b < 8; ++b) {
        bits |= static_cast<std::uint64_t>(static_cast<unsigned char>(in[index * 8 + b])) << (8 * b);
    }
    return std::bit_cast<double>(bits);
}

std::filesystem::path manifest_path(const std::filesystem::path& path) {
    auto m = path;
    m += ".json";
    return m;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint) {
    checkpoint.params.validate();
    std::string blob;
    nlohmann::json tensors = nlohmann::json::array();
    std::size_t offset = 0;
    auto emit = [&](const std::string& prefix, const ParamTree& tree) {
        tree.for_each([&](const std::string& name, const auto& t) {
            tensors.push_back({{"name", prefix + name},
                               {"shape", {t.rows(), t.cols()}},
                               {"offset", offset}});
            for (Eigen::Index k = 0; k < t.size(); ++k) append_le(blob, t.data()[k]);
            offset += static_cast<std::size_t>(t.size());
        });
    };
    emit("", checkpoint.params.layers);
    for (const auto& [name, tree] : checkpoint.aux) {
        if (!tree.same_shape(checkpoint.params.layers)) {
            throw ParameterError("checkpoint aux tree '" + name + "' is not shape-congruent");
        }
        emit(name + "/", tree);
    }
    nlohmann::json manifest = {{"format", "scanmix-checkpoint"},
                               {"version", kCheckpointVersion},
                               {"dtype", "float64-le"},
                               {"order", "column-major"},
                               {"architecture", arch_to_json(checkpoint.params.arch)},
                               {"aux", nlohmann::json::array()},
                               {"count", offset},
                               {"tensors", tensors},
                               {"meta", checkpoint.meta}};
    for (const auto& [name, tree] : checkpoint.aux) manifest["aux"].push_back(name);
    io::write_file_atomic(path, blob);
    io::write_file_atomic(manifest_path(path), manifest.dump(2) + "\n");
}

void save_model(const std::filesystem::path& path, const ModelParams& params) {
    save_checkpoint(path, Checkpoint{params, {}, nlohmann::json::object()});
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    nlohmann::json manifest;
    try {
        manifest = nlohmann::json::parse(io::read_file(manifest_path(path)));
    } catch (const nlohmann::json::exception& e) {
        throw FormatError("bad checkpoint manifest: " + std::string(e.what()));
    }
    if (manifest.value("format", "") != "scanmix-checkpoint" ||
        manifest.value("version", 0) != kCheckpointVersion) {
        throw FormatError("unsupported checkpoint format in " + manifest_path(path).string());
    }
    const std::string blob = io::read_file(path);
    const auto count = manifest.at("count").get<std::size_t>();
    if (blob.size() != count * 8) throw FormatError("checkpoint size does not match manifest");

    Checkpoint cp;
    cp.params = ModelParams::zeros(arch_from_json(manifest.at("architecture")));
    for (const auto& name : manifest.at("aux")) cp.aux[name.get<std::string>()] = cp.params.layers.zeros_like();
    cp.meta = manifest.value("meta", nlohmann::json::object());

    std::map<std::string, std::pair<std::size_t, std::vector<long>>> index;
    for (const auto& t : manifest.at("tensors")) {
        index[t.at("name").get<std::string>()] = {t.at("offset").get<std::size_t>(),
                                                  t.at("shape").get<std::vector<long>>()};
    }
    auto fill = [&](const std::string& prefix, ParamTree& tree) {
        tree.for_each([&](const std::string& name, auto& t) {
            auto it = index.find(prefix + name);
            if (it == index.end()) throw FormatError("checkpoint lacks tensor " + prefix + name);
            const auto& [off, shape] = it->second;
            if (shape.size() != 2 || shape[0] != t.rows() || shape[1] != t.cols() ||
                off + static_cast<std::size_t>(t.size()) > count) {
                throw FormatError("checkpoint tensor " + prefix + name + " has the wrong shape");
            }
            for (Eigen::Index k = 0; k < t.size(); ++k) t.data()[k] = read_le(blob, off + static_cast<std::size_t>(k));
        });
    };
    fill("", cp.params.layers);
    for (auto& [name, tree] : cp.aux) fill(name + "/", tree);
    return cp;
}

ModelParams load_model(const std::filesystem::path& path) { return load_checkpoint(path).params; }

}  // namespace scanmix
