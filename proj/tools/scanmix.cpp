// Command-line front end: datagen, noise, pretrain, train, eval, export-hist, run.

#include <iostream>

#include <CLI11.hpp>

#include "scanmix/errors.hpp"
#include "scanmix/io.hpp"
#include "scanmix/pipeline.hpp"

namespace {

using namespace scanmix;

struct DatagenArgs {
    std::string shape = "blobs";
    int classes = 4;
    int per_class = 500;
    int dim = 2;
    double spread = 0.5;
    double radius_step = 1.0;
    double noise_sigma = 0.05;
    std::uint64_t seed = 1;
    std::string out;
};

struct NoiseArgs {
    std::string kind = "symmetric";
    double rate = 0.0;
    std::uint64_t seed = 1;
    std::uint64_t model_seed = 2;
    int weak_epochs = 1;
    std::string pairs;
    std::string in, out;
};

struct PretrainArgs {
    int epochs = 100;
    int k = 20;
    std::uint64_t seed = 3;
    std::uint64_t model_seed = 2;
    double temperature = 0.5;
    int batch_size = 256;
    double lr = 0.05;
    double sigma = 0.1;
    std::string in, out_model, out_knn;
};

struct RunArgs {
    std::string config;
    std::vector<std::string> overrides;
    std::string pretrained, knn;
};

struct EvalArgs {
    std::string model, in;
};

struct HistArgs {
    std::string dump, out;
    int bins = 20;
};

PipelineConfig load_pipeline_config(const RunArgs& args) {
    ConfigMap values = read_config(args.config);
    for (const auto& item : args.overrides) {
        const auto parsed = parse_config_text(item);
        for (const auto& [key, value] : parsed) values[key] = value;
    }
    return PipelineConfig::from_map(values);
}

void print_manifest(const RunManifest& manifest) {
    std::cout << "final accuracy " << io::format_double(manifest.final_accuracy) << "\n"
              << "manifest " << manifest.artifacts.at("manifest").string() << "\n";
}

int run_datagen(const DatagenArgs& a) {
    const LabeledDataset data = a.shape == "blobs"
                                    ? generate_blobs(a.classes, a.per_class, a.dim, a.spread, a.seed)
                                    : generate_rings(a.classes, a.per_class, a.radius_step, a.noise_sigma, a.seed);
    save_csv(data, a.out, false);
    std::cout << "wrote " << data.size() << " samples to " << a.out << "\n";
    return 0;
}

int run_noise(const NoiseArgs& a) {
    if (!(a.rate >= 0.0 && a.rate <= 1.0)) throw ValidationError("--rate", "must lie in [0, 1]");
    const LabeledDataset clean = load_csv(a.in);
    LabeledDataset noisy;
    switch (parse_noise_kind(a.kind)) {
        case NoiseKind::symmetric:
            noisy = inject(clean, symmetric_matrix(clean.class_count, a.rate), a.seed);
            break;
        case NoiseKind::asymmetric:
            noisy = inject(clean, asymmetric_matrix(clean.class_count, a.rate, parse_pair_map(a.pairs)), a.seed);
            break;
        case NoiseKind::semantic: {
            TrainConfig defaults;
            const auto weak = train_weak_model(clean, defaults.architecture(clean.dim(), clean.class_count),
                                               a.model_seed, a.weak_epochs);
            noisy = inject_semantic(clean, weak, a.rate, a.seed);
            break;
        }
    }
    save_csv(noisy, a.out, true);
    std::size_t flipped = 0;
    for (std::size_t i = 0; i < noisy.size(); ++i) flipped += noisy.noisy_labels[i] != noisy.clean_labels[i];
    std::cout << "flipped " << flipped << " of " << noisy.size() << " labels\n";
    return 0;
}

int run_pretrain(const PretrainArgs& a) {
    const LabeledDataset data = load_csv(a.in);
    TrainConfig tc;
    tc.pretrain.epochs = a.epochs;
    tc.pretrain.temperature = a.temperature;
    tc.pretrain.batch_size = a.batch_size;
    tc.pretrain.lr = a.lr;
    tc.augment.additive_noise_sigma = a.sigma;
    tc.pretrain.validate();
    tc.augment.validate();
    if (a.k < 1 || static_cast<std::size_t>(a.k) >= data.size()) {
        throw ValidationError("--k", "must lie in [1, N)");
    }
    const auto init = ModelParams::init(tc.architecture(data.dim(), data.class_count), a.model_seed);
    const auto model = pretrain(data, init, tc.augment, tc.pretrain, a.seed);
    save_model(a.out_model, model);
    save_knn_csv(mine_knn(encode(model, data.features), static_cast<std::size_t>(a.k)), a.out_knn);
    std::cout << "wrote " << a.out_model << " and " << a.out_knn << "\n";
    return 0;
}

int run_train(const RunArgs& a) {
    PipelineOptions options;
    if (!a.pretrained.empty()) options.pretrained_model = a.pretrained;
    if (!a.knn.empty()) options.knn = a.knn;
    print_manifest(run_pipeline(load_pipeline_config(a), options));
    return 0;
}

int run_eval(const EvalArgs& a) {
    const ModelParams model = load_model(a.model);
    const LabeledDataset test = load_csv(a.in, model.arch.class_count);
    const Evaluation ev = evaluate(model, test);
    const nlohmann::json out = {{"accuracy", ev.accuracy}, {"per_class_accuracy", ev.per_class_accuracy}};
    std::cout << out.dump() << "\n";
    return 0;
}

int run_export_hist(const HistArgs& a) {
    const std::string csv = histogram_csv(export_histogram(a.dump, a.bins));
    if (a.out.empty()) {
        std::cout << csv;
    } else {
        io::write_file_atomic(a.out, csv);
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Noisy-label training laboratory"};
    app.set_version_flag("--version", scanmix::tool_version());
    app.require_subcommand(1);
    std::function<int()> action;

    DatagenArgs dg;
    auto* datagen = app.add_subcommand("datagen", "Generate a synthetic dataset as CSV");
    datagen->add_option("shape", dg.shape, "blobs or rings")->required()->check(CLI::IsMember({"blobs", "rings"}));
    datagen->add_option("--classes", dg.classes)->check(CLI::Range(2, 100000));
    datagen->add_option("--per-class", dg.per_class)->check(CLI::PositiveNumber);
    datagen->add_option("--dim", dg.dim, "blobs only")->check(CLI::PositiveNumber);
    datagen->add_option("--spread", dg.spread, "blobs only")->check(CLI::PositiveNumber);
    datagen->add_option("--radius-step", dg.radius_step, "rings only")->check(CLI::PositiveNumber);
    datagen->add_option("--noise-sigma", dg.noise_sigma, "rings only")->check(CLI::NonNegativeNumber);
    datagen->add_option("--seed", dg.seed);
    datagen->add_option("--out", dg.out)->required();
    datagen->callback([&] { action = [&] { return run_datagen(dg); }; });

    NoiseArgs na;
    auto* noise = app.add_subcommand("noise", "Label-noise tools");
    noise->require_subcommand(1);
    auto* inject_cmd = noise->add_subcommand("inject", "Resample observed labels; appends a noisy_label column");
    inject_cmd->add_option("--kind", na.kind)->check(CLI::IsMember({"symmetric", "asymmetric", "semantic"}));
    inject_cmd->add_option("--rate", na.rate)->required();
    inject_cmd->add_option("--seed", na.seed);
    inject_cmd->add_option("--pairs", na.pairs, "asymmetric map, e.g. 9:1,2:0");
    inject_cmd->add_option("--model-seed", na.model_seed, "semantic: weak model initialisation");
    inject_cmd->add_option("--weak-epochs", na.weak_epochs, "semantic: weak model training epochs")
        ->check(CLI::PositiveNumber);
    inject_cmd->add_option("--in", na.in)->required();
    inject_cmd->add_option("--out", na.out)->required();
    inject_cmd->callback([&] { action = [&] { return run_noise(na); }; });

    PretrainArgs pa;
    auto* pre = app.add_subcommand("pretrain", "Contrastive pre-training and neighbour mining");
    pre->add_option("--epochs", pa.epochs)->check(CLI::NonNegativeNumber);
    pre->add_option("--k", pa.k);
    pre->add_option("--seed", pa.seed);
    pre->add_option("--model-seed", pa.model_seed);
    pre->add_option("--temperature", pa.temperature)->check(CLI::PositiveNumber);
    pre->add_option("--batch-size", pa.batch_size)->check(CLI::Range(2, 1 << 30));
    pre->add_option("--lr", pa.lr)->check(CLI::NonNegativeNumber);
    pre->add_option("--sigma", pa.sigma, "augmentation noise")->check(CLI::NonNegativeNumber);
    pre->add_option("--in", pa.in)->required();
    pre->add_option("--out-model", pa.out_model)->required();
    pre->add_option("--out-knn", pa.out_knn)->required();
    pre->callback([&] { action = [&] { return run_pretrain(pa); }; });

    RunArgs ta;
    auto* train_cmd = app.add_subcommand("train", "Train from a key=value config");
    train_cmd->add_option("--config", ta.config)->required();
    train_cmd->add_option("--set", ta.overrides, "override, e.g. --set noise.rate=0.8");
    train_cmd->add_option("--pretrained", ta.pretrained, "skip pre-training and start from this model");
    train_cmd->add_option("--knn", ta.knn, "skip neighbour mining and use this index");
    train_cmd->callback([&] { action = [&] { return run_train(ta); }; });

    RunArgs ra;
    auto* run = app.add_subcommand("run", "Full pipeline: data, noise, pre-training, training, evaluation");
    run->add_option("--config", ra.config)->required();
    run->add_option("--set", ra.overrides, "override, e.g. --set train.mode=ce_only");
    run->callback([&] { action = [&] { return run_train(ra); }; });

    EvalArgs ea;
    auto* eval = app.add_subcommand("eval", "Accuracy of a saved model on a CSV dataset");
    eval->add_option("--model", ea.model)->required();
    eval->add_option("--in", ea.in)->required();
    eval->callback([&] { action = [&] { return run_eval(ea); }; });

    HistArgs ha;
    auto* hist = app.add_subcommand("export-hist", "Clean/noisy loss histograms from a division dump");
    hist->add_option("--dump", ha.dump)->required();
    hist->add_option("--bins", ha.bins)->check(CLI::PositiveNumber);
    hist->add_option("--out", ha.out, "CSV path; stdout when omitted");
    hist->callback([&] { action = [&] { return run_export_hist(ha); }; });

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& err) {
        const int code = app.exit(err);
        return code == 0 ? 0 : 1;
    }
    try {
        return action();
    } catch (const scanmix::ValidationError& err) {
        std::cerr << "invalid configuration: " << err.what() << "\n";
        return 1;
    } catch (const scanmix::ParameterError& err) {
        std::cerr << "invalid argument: " << err.what() << "\n";
        return 1;
    } catch (const std::exception& err) {
        std::cerr << "error: " << err.what() << "\n";
        return 2;
    }
}
