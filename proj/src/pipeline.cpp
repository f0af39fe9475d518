#include "scanmix/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <fstream>
#include <sstream>

#include "scanmix/errors.hpp"
#include "scanmix/io.hpp"

namespace scanmix {

namespace {

constexpr const char* kVersion = "0.1.0";

std::string join_ints(const std::vector<int>& values) {
    std::string out;
    for (std::size_t k = 0; k < values.size(); ++k) {
        if (k) out += ',';
        out += std::to_string(values[k]);
    }
    return out;
}

/// Typed, range-checked access to config values. Every failure names the key.
class Reader {
public:
    explicit Reader(const ConfigMap& values) : values_(values) {}

    const std::string& text(const std::string& key) const { return values_.at(key); }

    long long integer(const std::string& key, long long lo, long long hi) const {
        long long v = 0;
        try {
            v = io::parse_int(io::trim(text(key)), 0);
        } catch (const ParseError&) {
            throw ValidationError(key, "expected an integer, got '" + text(key) + "'");
        }
        if (v < lo || v > hi) {
            throw ValidationError(key, "value " + std::to_string(v) + " outside [" + std::to_string(lo) + ", " +
                                           std::to_string(hi) + "]");
        }
        return v;
    }

    std::uint64_t seed(const std::string& key) const {
        return static_cast<std::uint64_t>(integer(key, 0, std::numeric_limits<long long>::max()));
    }

    /// Real in the interval; open ends are excluded.
    double real(const std::string& key, double lo, double hi, bool lo_open = false, bool hi_open = false) const {
        double v = 0.0;
        try {
            v = io::parse_double(io::trim(text(key)), 0);
        } catch (const ParseError&) {
            throw ValidationError(key, "expected a number, got '" + text(key) + "'");
        }
        const bool ok = std::isfinite(v) && (lo_open ? v > lo : v >= lo) && (hi_open ? v < hi : v <= hi);
        if (!ok) {
            std::ostringstream range;
            range << (lo_open ? "(" : "[") << lo << ", " << hi << (hi_open ? ")" : "]");
            throw ValidationError(key, "value " + text(key) + " outside " + range.str());
        }
        return v;
    }

    bool boolean(const std::string& key) const {
        const auto v = io::trim(text(key));
        if (v == "true" || v == "1") return true;
        if (v == "false" || v == "0") return false;
        throw ValidationError(key, "expected true or false");
    }

    std::vector<int> int_list(const std::string& key, int lo) const {
        std::vector<int> out;
        const auto v = io::trim(text(key));
        if (v.empty()) return out;
        for (auto field : io::split(v, ',')) {
            long long x = 0;
            try {
                x = io::parse_int(io::trim(field), 0);
            } catch (const ParseError&) {
                throw ValidationError(key, "expected a comma-separated integer list");
            }
            if (x < lo || x > 1'000'000) throw ValidationError(key, "list entry out of range");
            out.push_back(static_cast<int>(x));
        }
        return out;
    }

private:
    const ConfigMap& values_;
};

}  // namespace

ConfigMap parse_config_text(std::string_view text) {
    ConfigMap out;
    std::size_t line_no = 0;
    std::size_t pos = 0;
    while (pos <= text.size()) {
        const auto end = std::min(text.find('\n', pos), text.size());
        const auto line = io::trim(text.substr(pos, end - pos));
        ++line_no;
        pos = end + 1;
        if (line.empty() || line.front() == '#') continue;
        const auto eq = line.find('=');
        if (eq == std::string_view::npos) throw ParseError("expected key=value", line_no);
        const std::string key(io::trim(line.substr(0, eq)));
        if (key.empty()) throw ParseError("empty key", line_no);
        if (!out.emplace(key, std::string(io::trim(line.substr(eq + 1)))).second) {
            throw ParseError("duplicate key '" + key + "'", line_no);
        }
    }
    return out;
}

ConfigMap read_config(const std::filesystem::path& path) { return parse_config_text(io::read_file(path)); }

std::string format_config(const ConfigMap& config) {
    std::string out;
    for (const auto& [key, value] : config) out += key + "=" + value + "\n";
    return out;
}

ConfigMap default_config() {
    const DataConfig data;
    const TrainConfig t;
    const OutputConfig o;
    const auto f = io::format_double;
    return {
        {"data.source", "blobs"},
        {"data.classes", std::to_string(data.classes)},
        {"data.per_class", std::to_string(data.per_class)},
        {"data.dim", std::to_string(data.dim)},
        {"data.spread", f(data.spread)},
        {"data.radius_step", f(data.radius_step)},
        {"data.noise_sigma", f(data.noise_sigma)},
        {"data.test_fraction", f(data.test_fraction)},
        {"data.path", ""},
        {"data.test_path", ""},
        {"noise.kind", "none"},
        {"noise.rate", "0"},
        {"noise.pairs", ""},
        {"noise.weak_epochs", "1"},
        {"seed.data", std::to_string(t.seeds.data)},
        {"seed.model", std::to_string(t.seeds.model)},
        {"seed.training", std::to_string(t.seeds.training)},
        {"model.hidden", join_ints(t.model.hidden)},
        {"model.feature_dim", std::to_string(t.model.feature_dim)},
        {"model.projection_dim", std::to_string(t.model.projection_dim)},
        {"augment.sigma", f(t.augment.additive_noise_sigma)},
        {"augment.jitter_lo", f(t.augment.scale_jitter_lo)},
        {"augment.jitter_hi", f(t.augment.scale_jitter_hi)},
        {"augment.flip_axes", ""},
        {"pretrain.temperature", f(t.pretrain.temperature)},
        {"pretrain.epochs", std::to_string(t.pretrain.epochs)},
        {"pretrain.batch_size", std::to_string(t.pretrain.batch_size)},
        {"pretrain.lr", f(t.pretrain.lr)},
        {"pretrain.momentum", f(t.pretrain.momentum)},
        {"pretrain.weight_decay", f(t.pretrain.weight_decay)},
        {"train.mode", to_string(t.mode)},
        {"train.epochs", std::to_string(t.epochs)},
        {"train.warmup_epochs", std::to_string(t.warmup_epochs)},
        {"train.tau", f(t.tau)},
        {"train.k", std::to_string(t.k)},
        {"train.lr", f(t.lr)},
        {"train.lr_high", f(t.lr_high)},
        {"train.lr_low", f(t.lr_low)},
        {"train.noise_rate_gate", f(t.noise_rate_gate)},
        {"train.momentum", f(t.momentum)},
        {"train.weight_decay", f(t.weight_decay)},
        {"train.cluster_weight_decay", f(t.cluster_weight_decay)},
        {"train.batch_size", std::to_string(t.batch_size)},
        {"train.cluster_batch_size", std::to_string(t.cluster_batch_size)},
        {"train.checkpoint_every", std::to_string(t.checkpoint_every)},
        {"mix.alpha", f(t.mix.alpha)},
        {"mix.lambda_u", f(t.mix.lambda_u)},
        {"mix.lambda_u_low", f(t.mix.lambda_u_low)},
        {"mix.lambda_r", f(t.mix.lambda_r)},
        {"mix.sharpen_t", f(t.mix.sharpen_t)},
        {"mix.num_augments", std::to_string(t.mix.num_augments)},
        {"mix.reguess_noisy", t.mix.reguess_noisy ? "true" : "false"},
        {"scan.lambda_e", f(t.scan.lambda_e)},
        {"scan.prob_clamp", f(t.scan.prob_clamp)},
        {"gmm.max_iters", std::to_string(t.gmm.max_iters)},
        {"gmm.tol", f(t.gmm.tol)},
        {"gmm.variance_floor", f(t.gmm.variance_floor)},
        {"output.dir", o.dir.string()},
        {"output.histogram_bins", std::to_string(o.histogram_bins)},
        {"output.resume_from", ""},
    };
}

PipelineConfig PipelineConfig::from_map(const ConfigMap& values) {
    ConfigMap merged = default_config();
    for (const auto& [key, value] : values) {
        auto it = merged.find(key);
        if (it == merged.end()) throw ValidationError(key, "unknown configuration key");
        it->second = value;
    }
    const Reader r(merged);
    constexpr long long kMaxCount = 10'000'000;
    PipelineConfig c;
    c.snapshot = merged;

    auto& d = c.data;
    const auto& source = r.text("data.source");
    if (source == "blobs") d.source = DataSource::blobs;
    else if (source == "rings") d.source = DataSource::rings;
    else if (source == "csv") d.source = DataSource::csv;
    else throw ValidationError("data.source", "expected blobs, rings or csv");
    d.classes = static_cast<int>(r.integer("data.classes", 2, 100000));
    d.per_class = static_cast<int>(r.integer("data.per_class", 1, kMaxCount));
    d.dim = static_cast<int>(r.integer("data.dim", 1, 100000));
    d.spread = r.real("data.spread", 0.0, 1e6, true);
    d.radius_step = r.real("data.radius_step", 0.0, 1e6, true);
    d.noise_sigma = r.real("data.noise_sigma", 0.0, 1e6);
    d.test_fraction = r.real("data.test_fraction", 0.0, 1.0, true, true);
    d.path = r.text("data.path");
    d.test_path = r.text("data.test_path");
    if (d.source == DataSource::csv && d.path.empty()) throw ValidationError("data.path", "required when data.source=csv");
    if (d.source == DataSource::rings && d.dim != 2) throw ValidationError("data.dim", "rings are two-dimensional");

    auto& n = c.noise;
    const auto& kind = r.text("noise.kind");
    if (kind != "none") {
        try {
            n.kind = parse_noise_kind(kind);
        } catch (const ParameterError&) {
            throw ValidationError("noise.kind", "expected none, symmetric, asymmetric or semantic");
        }
    }
    n.rate = r.real("noise.rate", 0.0, 1.0);
    try {
        n.pairs = parse_pair_map(r.text("noise.pairs"));
    } catch (const std::exception& err) {
        throw ValidationError("noise.pairs", err.what());
    }
    if (n.kind == NoiseKind::asymmetric) {
        if (n.pairs.empty()) throw ValidationError("noise.pairs", "required for asymmetric noise");
        for (const auto& [from, to] : n.pairs) {
            if (from == to) throw ValidationError("noise.pairs", "a class may not map to itself");
            if (d.source != DataSource::csv && (from >= d.classes || to >= d.classes)) {
                throw ValidationError("noise.pairs", "class id outside data.classes");
            }
        }
    }
    n.weak_epochs = static_cast<int>(r.integer("noise.weak_epochs", 1, 100000));

    auto& t = c.train;
    t.seeds.data = r.seed("seed.data");
    t.seeds.model = r.seed("seed.model");
    t.seeds.training = r.seed("seed.training");
    t.model.hidden = r.int_list("model.hidden", 1);
    t.model.feature_dim = static_cast<int>(r.integer("model.feature_dim", 1, 100000));
    t.model.projection_dim = static_cast<int>(r.integer("model.projection_dim", 1, 100000));

    t.augment.additive_noise_sigma = r.real("augment.sigma", 0.0, 1e6);
    t.augment.scale_jitter_lo = r.real("augment.jitter_lo", 0.0, 1.0, true);
    t.augment.scale_jitter_hi = r.real("augment.jitter_hi", 1.0, 1e6);
    t.augment.flip_axes.clear();
    for (int flag : r.int_list("augment.flip_axes", 0)) {
        if (flag > 1) throw ValidationError("augment.flip_axes", "entries must be 0 or 1");
        t.augment.flip_axes.push_back(flag == 1);
    }
    if (!t.augment.flip_axes.empty() && static_cast<int>(t.augment.flip_axes.size()) != d.dim &&
        d.source != DataSource::csv) {
        throw ValidationError("augment.flip_axes", "needs one entry per feature axis");
    }

    t.pretrain.temperature = r.real("pretrain.temperature", 0.0, 1e6, true);
    t.pretrain.epochs = static_cast<int>(r.integer("pretrain.epochs", 0, 1000000));
    t.pretrain.batch_size = static_cast<int>(r.integer("pretrain.batch_size", 2, kMaxCount));
    t.pretrain.lr = r.real("pretrain.lr", 0.0, 1e3);
    t.pretrain.momentum = r.real("pretrain.momentum", 0.0, 1.0, false, true);
    t.pretrain.weight_decay = r.real("pretrain.weight_decay", 0.0, 1e3);
    t.pretrain.embedding_dim = t.model.projection_dim;

    try {
        t.mode = parse_run_mode(r.text("train.mode"));
    } catch (const ParameterError&) {
        throw ValidationError("train.mode", "expected scanmix, ce_only, ssl_only or pretrain_ssl");
    }
    t.epochs = static_cast<int>(r.integer("train.epochs", 0, 1000000));
    t.warmup_epochs = static_cast<int>(r.integer("train.warmup_epochs", 0, t.epochs));
    t.tau = r.real("train.tau", 0.0, 1.0, true, true);
    t.k = static_cast<int>(r.integer("train.k", 1, kMaxCount));
    t.lr = r.real("train.lr", 0.0, 1e3);
    t.lr_high = r.real("train.lr_high", 0.0, 1e3);
    t.lr_low = r.real("train.lr_low", 0.0, 1e3);
    t.noise_rate_gate = r.real("train.noise_rate_gate", 0.0, 1.0, true, true);
    t.momentum = r.real("train.momentum", 0.0, 1.0, false, true);
    t.weight_decay = r.real("train.weight_decay", 0.0, 1e3);
    t.cluster_weight_decay = r.real("train.cluster_weight_decay", 0.0, 1e3);
    t.batch_size = static_cast<int>(r.integer("train.batch_size", 1, kMaxCount));
    t.cluster_batch_size = static_cast<int>(r.integer("train.cluster_batch_size", 1, kMaxCount));
    t.checkpoint_every = static_cast<int>(r.integer("train.checkpoint_every", 0, 1000000));

    t.mix.alpha = r.real("mix.alpha", 0.0, 1e6, true);
    t.mix.lambda_u = r.real("mix.lambda_u", 0.0, 1e6);
    t.mix.lambda_u_low = r.real("mix.lambda_u_low", 0.0, 1e6);
    t.mix.lambda_r = r.real("mix.lambda_r", 0.0, 1e6);
    t.mix.sharpen_t = r.real("mix.sharpen_t", 0.0, 1e6, true);
    t.mix.num_augments = static_cast<int>(r.integer("mix.num_augments", 1, 1000));
    t.mix.reguess_noisy = r.boolean("mix.reguess_noisy");
    t.scan.lambda_e = r.real("scan.lambda_e", 0.0, 1e6);
    t.scan.prob_clamp = r.real("scan.prob_clamp", 0.0, 1.0, true, true);
    t.gmm.max_iters = static_cast<int>(r.integer("gmm.max_iters", 1, 1000000));
    t.gmm.tol = r.real("gmm.tol", 0.0, 1.0, true);
    t.gmm.variance_floor = r.real("gmm.variance_floor", 0.0, 1.0, true);

    c.output.dir = r.text("output.dir");
    if (c.output.dir.empty()) throw ValidationError("output.dir", "must not be empty");
    c.output.histogram_bins = static_cast<int>(r.integer("output.histogram_bins", 1, 100000));
    c.output.resume_from = r.text("output.resume_from");
    if (t.checkpoint_every > 0) t.checkpoint_dir = c.output.dir / "checkpoints";

    if (d.source != DataSource::csv && t.mode == RunMode::scanmix) {
        const auto train_size = static_cast<long long>(d.classes) * d.per_class;
        if (t.k >= static_cast<long long>(static_cast<double>(train_size) * (1.0 - d.test_fraction))) {
            throw ValidationError("train.k", "must be smaller than the training set");
        }
    }
    try {
        t.validate();
    } catch (const ParameterError& err) {
        throw ValidationError("train", err.what());
    }
    return c;
}

nlohmann::json RunManifest::to_json() const {
    nlohmann::json cfg = nlohmann::json::object();
    for (const auto& [key, value] : config) cfg[key] = value;
    nlohmann::json paths = nlohmann::json::object();
    for (const auto& [name, path] : artifacts) paths[name] = path.string();
    return {{"version", version},
            {"seeds", {{"data", seeds.data}, {"model", seeds.model}, {"training", seeds.training}}},
            {"config", cfg},
            {"artifacts", paths},
            {"final_accuracy", final_accuracy},
            {"duration_seconds", duration_seconds}};
}

std::string tool_version() { return kVersion; }

std::pair<LabeledDataset, LabeledDataset> prepare_data(const PipelineConfig& config) {
    const auto& d = config.data;
    const auto seed = config.train.seeds.data;
    LabeledDataset train, test;
    switch (d.source) {
        case DataSource::blobs:
            std::tie(train, test) = train_test_split(generate_blobs(d.classes, d.per_class, d.dim, d.spread, seed),
                                                     d.test_fraction, seed);
            break;
        case DataSource::rings:
            std::tie(train, test) = train_test_split(
                generate_rings(d.classes, d.per_class, d.radius_step, d.noise_sigma, seed), d.test_fraction, seed);
            break;
        case DataSource::csv:
            train = load_csv(d.path);
            if (d.test_path.empty()) {
                // The split keeps whatever observed labels the file carries.
                std::tie(train, test) = train_test_split(train, d.test_fraction, seed);
            } else {
                test = load_csv(d.test_path, train.class_count);
                if (test.dim() != train.dim()) throw FormatError("test set dimension differs from training set");
            }
            break;
    }
    if (!config.noise.kind) return {train, test};
    switch (*config.noise.kind) {
        case NoiseKind::symmetric:
            train = inject(train, symmetric_matrix(train.class_count, config.noise.rate), seed);
            break;
        case NoiseKind::asymmetric:
            train = inject(train, asymmetric_matrix(train.class_count, config.noise.rate, config.noise.pairs), seed);
            break;
        case NoiseKind::semantic: {
            const auto arch = config.train.architecture(train.dim(), train.class_count);
            const auto weak = train_weak_model(train, arch, config.train.seeds.model, config.noise.weak_epochs);
            train = inject_semantic(train, weak, config.noise.rate, seed);
            break;
        }
    }
    return {train, test};
}

namespace {

/// Lines of an existing metrics file for epochs before `next_epoch`.
std::string metrics_prefix(const std::filesystem::path& path, int next_epoch) {
    if (!std::filesystem::exists(path)) return {};
    std::istringstream in(io::read_file(path));
    std::string kept, line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const auto record = nlohmann::json::parse(line, nullptr, false);
        if (record.is_discarded() || !record.contains("epoch")) throw FormatError("malformed metrics line in " + path.string());
        if (record["epoch"].get<int>() < next_epoch) kept += line + "\n";
    }
    return kept;
}

void dump_division(const std::filesystem::path& path, const ModelParams& params, const LabeledDataset& data,
                   const TrainConfig& config) {
    const auto outcome = divide(predict(params, data.features), data.noisy_labels, config.tau, config.gmm);
    save_divide_dump(path, outcome.posterior, data.clean_labels, data.noisy_labels);
}

}  // namespace

RunManifest run_pipeline(const PipelineConfig& config, const PipelineOptions& options) {
    const auto started = std::chrono::steady_clock::now();
    const auto& tc = config.train;
    const auto& dir = config.output.dir;
    std::filesystem::create_directories(dir);
    if (!tc.checkpoint_dir.empty()) std::filesystem::create_directories(tc.checkpoint_dir);

    RunManifest manifest;
    manifest.config = config.snapshot;
    manifest.seeds = tc.seeds;
    manifest.version = tool_version();
    auto artifact = [&](const std::string& name, const std::filesystem::path& file) {
        manifest.artifacts[name] = dir / file;
        return dir / file;
    };

    auto [train_data, test_data] = prepare_data(config);
    save_csv(train_data, artifact("train_data", "train.csv"), true);
    save_csv(test_data, artifact("test_data", "test.csv"), false);

    const auto arch = tc.architecture(train_data.dim(), train_data.class_count);
    ModelParams pretrained;
    if (options.pretrained_model) {
        pretrained = load_model(*options.pretrained_model);
        if (!(pretrained.arch == arch)) throw FormatError("pretrained model does not match the configured architecture");
    } else {
        pretrained = ModelParams::init(arch, tc.seeds.model);
        if (uses_pretraining(tc.mode)) {
            pretrained = pretrain(train_data, pretrained, tc.augment, tc.pretrain, tc.seeds.training);
        }
    }
    save_model(artifact("pretrained_model", "pretrained.bin"), pretrained);

    std::optional<NeighborIndex> knn;
    if (tc.mode == RunMode::scanmix) {
        if (options.knn) {
            knn = load_knn_csv(*options.knn);
            if (knn->size() != train_data.size()) throw FormatError("neighbour file does not match the training set");
        } else {
            if (static_cast<std::size_t>(tc.k) >= train_data.size()) {
                throw ValidationError("train.k", "must be smaller than the training set");
            }
            knn = mine_knn(encode(pretrained, train_data.features), static_cast<std::size_t>(tc.k));
        }
        save_knn_csv(*knn, artifact("knn", "knn.csv"));
    }

    TrainState state = initial_state(pretrained);
    if (!config.output.resume_from.empty()) state = load_train_state(config.output.resume_from);

    const auto metrics_path = artifact("metrics", "metrics.jsonl");
    std::string metrics_text = metrics_prefix(metrics_path, state.next_epoch);
    io::write_file_atomic(metrics_path, metrics_text);

    const bool dumps_warmup = tc.warmup_epochs > 0 && tc.mode != RunMode::ce_only;
    const auto warmup_dump = dir / "divide_warmup.csv";
    const auto result = train(train_data, test_data, tc, state, knn ? &*knn : nullptr,
                              [&](const EpochMetrics& m, const TrainState& s) {
                                  std::ofstream out(metrics_path, std::ios::app | std::ios::binary);
                                  out << m.to_json().dump() << '\n';
                                  if (!out) throw IoError("cannot append to " + metrics_path.string());
                                  if (dumps_warmup && m.epoch == tc.warmup_epochs - 1) {
                                      dump_division(warmup_dump, s.params, train_data, tc);
                                  }
                              });
    if (std::filesystem::exists(warmup_dump)) manifest.artifacts["divide_warmup"] = warmup_dump;

    save_model(artifact("model", "model.bin"), result.params);
    const auto final_dump = artifact("divide_final", "divide_final.csv");
    dump_division(final_dump, result.params, train_data, tc);
    io::write_file_atomic(artifact("histogram", "histogram.csv"),
                          histogram_csv(export_histogram(final_dump, config.output.histogram_bins)));
    if (manifest.artifacts.count("divide_warmup")) {
        io::write_file_atomic(artifact("histogram_warmup", "histogram_warmup.csv"),
                              histogram_csv(export_histogram(warmup_dump, config.output.histogram_bins)));
    }

    const auto ev = evaluate(result.params, test_data);
    manifest.final_accuracy = ev.accuracy;
    nlohmann::json evaluation = {{"accuracy", ev.accuracy},
                                 {"per_class_accuracy", ev.per_class_accuracy},
                                 {"best_accuracy", result.best_accuracy},
                                 {"last10_mean", result.last10_mean}};
    io::write_file_atomic(artifact("evaluation", "evaluation.json"), evaluation.dump(2) + "\n");
    io::write_file_atomic(artifact("config", "config.cfg"), format_config(config.snapshot));

    manifest.duration_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    const auto manifest_path = dir / "manifest.json";
    manifest.artifacts["manifest"] = manifest_path;
    io::write_file_atomic(manifest_path, manifest.to_json().dump(2) + "\n");
    return manifest;
}

RunManifest run_pipeline(const std::filesystem::path& config_path) {
    return run_pipeline(PipelineConfig::from_map(read_config(config_path)));
}

LossHistogram export_histogram(const std::filesystem::path& dump_path, int bins) {
    const std::string text = io::read_file(dump_path);
    std::istringstream in(text);
    std::string line;
    if (!std::getline(in, line)) throw FormatError("empty dump file " + dump_path.string());
    const auto header = io::split(io::trim(line), ',');
    auto column = [&](std::string_view name) {
        const auto it = std::find_if(header.begin(), header.end(), [&](auto h) { return io::trim(h) == name; });
        if (it == header.end()) throw FormatError("dump is missing the '" + std::string(name) + "' column");
        return static_cast<std::size_t>(it - header.begin());
    };
    const auto loss_col = column("loss");
    const auto flag_col = column("is_truly_clean");

    std::vector<double> losses;
    std::vector<char> flags;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        const auto trimmed = io::trim(line);
        if (trimmed.empty()) continue;
        const auto fields = io::split(trimmed, ',');
        if (fields.size() != header.size()) throw ParseError("wrong field count", line_no);
        losses.push_back(io::parse_double(io::trim(fields[loss_col]), line_no));
        const auto flag = io::parse_int(io::trim(fields[flag_col]), line_no);
        if (flag != 0 && flag != 1) throw ParseError("is_truly_clean must be 0 or 1", line_no);
        flags.push_back(static_cast<char>(flag));
    }
    std::unique_ptr<bool[]> truly_clean(new bool[flags.size()]);
    for (std::size_t i = 0; i < flags.size(); ++i) truly_clean[i] = flags[i] != 0;
    return loss_histogram(losses, std::span<const bool>(truly_clean.get(), flags.size()), bins);
}

std::string histogram_csv(const LossHistogram& hist) {
    std::string out = "bin_lo,bin_hi,clean_count,noisy_count\n";
    for (std::size_t b = 0; b < hist.bins(); ++b) {
        out += io::format_double(hist.edges[b]) + "," + io::format_double(hist.edges[b + 1]) + "," +
               std::to_string(hist.clean_counts[b]) + "," + std::to_string(hist.noisy_counts[b]) + "\n";
    }
    return out;
}

}  // namespace scanmix
