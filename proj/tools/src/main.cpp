#include "avt/data.hpp"
#include "avt/errors.hpp"
#include "avt/eval.hpp"
#include "avt/groups.hpp"
#include "avt/hash.hpp"
#include "avt/ndt.hpp"
#include "avt/network.hpp"
#include "avt/train.hpp"
#include "avt/version.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>

namespace fs = std::filesystem;
using nlohmann::json;
using nlohmann::ordered_json;

namespace {

// ---------------------------------------------------------------------------
// Config plumbing. Every command takes a JSON config (--config) plus a few
// overriding flags; every run writes its outputs under one directory together
// with a manifest recording the resolved config and input content hashes.
// ---------------------------------------------------------------------------

std::string read_text(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw avt::Error(path + ": cannot open file");
    return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw avt::Error(path.string() + ": cannot open for writing");
    out << text;
    if (!out) throw avt::Error(path.string() + ": write failed");
}

json parse_config_file(const std::string& path) {
    try {
        return json::parse(read_text(path));
    } catch (const json::exception& e) {
        throw avt::ConfigError(path + ": invalid JSON: " + e.what());
    }
}

// typed field access with field-path diagnostics
template <typename T>
T jget(const json& j, const std::string& path) {
    const json* cur = &j;
    std::string walked;
    std::size_t start = 0;
    while (start <= path.size()) {
        std::size_t dot = path.find('.', start);
        std::string key = path.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
        walked = walked.empty() ? key : walked + "." + key;
        if (!cur->is_object() || !cur->contains(key))
            throw avt::ConfigError("config: missing field '" + walked + "'");
        cur = &(*cur)[key];
        if (dot == std::string::npos) break;
        start = dot + 1;
    }
    try {
        return cur->get<T>();
    } catch (const json::exception&) {
        throw avt::ConfigError("config: field '" + path + "' has the wrong type");
    }
}

template <typename T>
T jget_or(const json& j, const std::string& path, T fallback) {
    const json* cur = &j;
    std::size_t start = 0;
    while (start <= path.size()) {
        std::size_t dot = path.find('.', start);
        std::string key = path.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
        if (!cur->is_object() || !cur->contains(key)) return fallback;
        cur = &(*cur)[key];
        if (dot == std::string::npos) break;
        start = dot + 1;
    }
    try {
        return cur->get<T>();
    } catch (const json::exception&) {
        throw avt::ConfigError("config: field '" + path + "' has the wrong type");
    }
}

std::string data_root() {
    const char* env = std::getenv("AVT_DATA_DIR");
    return env ? env : "";
}

avt::Dataset load_dataset(const json& spec) {
    std::string kind = jget<std::string>(spec, "kind");
    auto resolve = [&](const std::string& p) {
        if (fs::path(p).is_absolute() || data_root().empty()) return p;
        return (fs::path(data_root()) / p).string();
    };
    if (kind == "idx")
        return avt::load_idx(resolve(jget<std::string>(spec, "images")),
                             resolve(jget<std::string>(spec, "labels")));
    if (kind == "cifar10") return avt::load_cifar10(resolve(jget<std::string>(spec, "dir")));
    if (kind == "blobs") {
        if (!spec.contains("spec")) throw avt::ConfigError("config: missing field 'dataset.spec'");
        return avt::synth_blobs(avt::blob_spec_from_json_text(spec.at("spec").dump()));
    }
    throw avt::ConfigError("config: unknown dataset kind '" + kind + "'");
}

avt::ArchSpec parse_arch(const json& j) {
    avt::ArchSpec arch;
    if (j.is_string()) {
        arch.preset = j.get<std::string>();
        return arch;
    }
    if (j.is_object()) {
        arch.preset = jget_or<std::string>(j, "preset", "");
        arch.standardize = jget_or<bool>(j, "standardize", false);
        if (!arch.preset.empty()) return arch;
        if (!j.contains("layers")) throw avt::ConfigError("config: custom arch needs 'layers'");
        for (const auto& jl : j.at("layers")) {
            std::string type = jget<std::string>(jl, "type");
            if (type == "dense")
                arch.custom.push_back(avt::DenseSpec{0, jget_or<int>(jl, "out", 0)});
            else if (type == "relu")
                arch.custom.push_back(avt::ReluSpec{});
            else if (type == "flatten")
                arch.custom.push_back(avt::FlattenSpec{});
            else if (type == "conv2d")
                arch.custom.push_back(avt::Conv2DSpec{0, jget<int>(jl, "out_ch"), jget<int>(jl, "kh"),
                                                      jget<int>(jl, "kw"), jget_or<int>(jl, "stride", 1),
                                                      jget_or<int>(jl, "pad", 0)});
            else
                throw avt::ConfigError("config: unknown layer type '" + type + "'");
        }
        return arch;
    }
    throw avt::ConfigError("config: 'arch' must be a preset name or an object");
}

avt::GroupPartition parse_partition(const json& j) {
    if (j.is_string()) return avt::partition_from_json_text(read_text(j.get<std::string>()));
    if (j.is_object()) return avt::partition_from_json_text(j.dump());
    throw avt::ConfigError("config: 'partition' must be a path or an inline object");
}

avt::TrainConfig parse_train_config(const json& j) {
    avt::TrainConfig cfg;
    cfg.epochs = jget<int>(j, "epochs");
    cfg.batch_size = jget_or<int>(j, "batch_size", 64);
    cfg.seed = jget_or<std::uint64_t>(j, "seed", 0);
    cfg.inverse_frequency_weights = jget_or<bool>(j, "inverse_frequency_weights", false);

    if (j.contains("optimizer")) {
        const json& jo = j.at("optimizer");
        std::string kind = jget<std::string>(jo, "kind");
        if (kind == "adam") {
            avt::AdamConfig a;
            a.lr = jget_or<double>(jo, "lr", 1e-3);
            a.beta1 = jget_or<double>(jo, "beta1", 0.9);
            a.beta2 = jget_or<double>(jo, "beta2", 0.999);
            a.eps = jget_or<double>(jo, "eps", 1e-8);
            cfg.optimizer = a;
        } else if (kind == "sgd-momentum") {
            avt::SgdMomentumConfig s;
            s.lr = jget_or<double>(jo, "lr", 0.1);
            s.momentum = jget_or<double>(jo, "momentum", 0.9);
            cfg.optimizer = s;
        } else {
            throw avt::ConfigError("config: unknown optimizer '" + kind + "'");
        }
    }

    const json& jl = j.contains("loss") ? j.at("loss") : json::object();
    std::string mode = jl.is_object() && jl.contains("mode") ? jl.at("mode").get<std::string>()
                                                             : std::string("natural");
    if (mode == "natural") {
        cfg.loss = avt::LossMode::natural();
    } else if (mode == "robust") {
        cfg.loss = avt::LossMode::robust(jget<double>(jl, "eps"));
    } else if (mode == "igrp") {
        avt::GroupPartition p = parse_partition(jl.at("partition"));
        cfg.loss = avt::LossMode::igrp(p, jget<double>(jl, "eps_outer"), jget<double>(jl, "eps_inner"),
                                       jget_or<bool>(jl, "ubs", false));
        if (jl.contains("extra_terms")) {
            for (const auto& jt : jl.at("extra_terms")) {
                avt::LossTerm t;
                std::string kind = jget<std::string>(jt, "kind");
                if (kind == "outer")
                    t.kind = avt::SpecKind::kOuter;
                else if (kind == "inner")
                    t.kind = avt::SpecKind::kInner;
                else
                    throw avt::ConfigError("config: extra term kind must be outer or inner");
                t.partition = parse_partition(jt.at("partition"));
                t.eps = jget<double>(jt, "eps");
                cfg.loss.extra_terms.push_back(std::move(t));
            }
        }
    } else {
        throw avt::ConfigError("config: unknown loss mode '" + mode + "'");
    }

    if (j.contains("schedule")) {
        const json& js = j.at("schedule");
        cfg.schedule.natural_warmup_epochs = jget_or<int>(js, "natural_warmup_epochs", 5);
        cfg.schedule.ramp_epochs = jget_or<int>(js, "ramp_epochs", -1);
        cfg.schedule.kappa_start = jget_or<double>(js, "kappa_start", 1.0);
        cfg.schedule.kappa_end = jget_or<double>(js, "kappa_end", 0.5);
    }
    return cfg;
}

struct Manifest {
    std::string command;
    json config;
    std::map<std::string, std::string> inputs;
    std::vector<std::string> outputs;

    void add_input(const std::string& path) {
        if (!path.empty() && fs::exists(path)) inputs[path] = avt::sha1_file_hex(path);
    }
    void write(const fs::path& dir) const {
        ordered_json j;
        j["tool_version"] = avt::kVersion;
        j["command"] = command;
        j["config"] = config;
        j["inputs"] = inputs;
        j["outputs"] = outputs;
        write_text(dir / "manifest.json", j.dump(1) + "\n");
    }
};

// ---------------------------------------------------------------------------
// Commands
// ---------------------------------------------------------------------------

int cmd_cluster(const std::string& model_path, const std::string& out_path) {
    avt::Network net = avt::load_network(model_path);
    const avt::LayerParams& head = net.final_params();
    avt::ClusterTree tree = avt::agglomerative_cluster(head.w);
    write_text(out_path, avt::cluster_tree_to_json_text(tree) + "\n");
    std::cout << avt::render_dendrogram(tree);
    avt::GroupPartition split = avt::top_level_split(tree);
    std::cout << "top-level split: " << avt::partition_to_json_text(split) << "\n";
    return 0;
}

int cmd_train(const json& cfg, const std::string& config_path, const fs::path& out_dir) {
    avt::Dataset ds = load_dataset(cfg.at("dataset"));
    avt::TrainConfig tc = parse_train_config(cfg.at("train"));
    avt::ArchSpec arch = parse_arch(cfg.at("arch"));
    std::uint64_t init_seed = jget_or<std::uint64_t>(cfg, "init_seed", tc.seed);

    avt::Network net = avt::build_network(arch, ds.sample_shape, ds.n_classes, init_seed, &ds);
    avt::TrainResult res = avt::train(std::move(net), ds, tc);

    fs::create_directories(out_dir);
    avt::save_network(res.net, (out_dir / "model.json").string());
    write_text(out_dir / "history.jsonl", avt::history_to_json_lines(res.history));

    Manifest m;
    m.command = "train";
    m.config = cfg;
    m.add_input(config_path);
    m.outputs = {"model.json", "history.jsonl"};
    m.write(out_dir);
    std::cout << "trained " << res.history.size() << " epochs; final clean error "
              << (res.history.empty() ? 0.0 : res.history.back().clean_error) << "\n";
    return 0;
}

int cmd_train_ndt(const json& cfg, const std::string& config_path, const fs::path& out_dir) {
    avt::Dataset ds = load_dataset(cfg.at("dataset"));
    avt::TrainConfig tc = parse_train_config(cfg.at("train"));
    avt::ArchSpec arch = parse_arch(cfg.at("arch"));

    std::string tree_path = jget<std::string>(cfg, "tree");
    avt::ClusterTree tree = avt::cluster_tree_from_json_text(read_text(tree_path));

    std::string variant_name = jget<std::string>(cfg, "variant");
    avt::NdtVariant variant;
    if (variant_name == "full")
        variant = avt::NdtVariant::kFull;
    else if (variant_name == "mixed")
        variant = avt::NdtVariant::kMixed;
    else if (variant_name == "truncated-mixed")
        variant = avt::NdtVariant::kTruncatedMixed;
    else
        throw avt::ConfigError("config: variant must be full, mixed, or truncated-mixed");

    std::vector<double> eps_table = jget<std::vector<double>>(cfg, "eps_table");
    int max_depth = jget_or<int>(cfg, "max_depth", 1);

    std::optional<avt::Network> base;
    std::string base_path = jget_or<std::string>(cfg, "finetune_base", "");
    if (!base_path.empty()) base = avt::load_network(base_path);

    avt::NdtPlan plan = avt::build_plan(tree, variant, eps_table, arch, max_depth);
    avt::Ndt ndt = avt::train_ndt(plan, ds, tc, base ? &*base : nullptr);

    fs::create_directories(out_dir);
    avt::save_ndt(ndt, (out_dir / "ndt").string());

    Manifest m;
    m.command = "train-ndt";
    m.config = cfg;
    m.add_input(config_path);
    m.add_input(tree_path);
    if (!base_path.empty()) m.add_input(base_path);
    m.outputs = {"ndt/ndt.json"};
    m.write(out_dir);
    std::cout << "trained ndt (" << variant_name << ")\n";
    return 0;
}

int cmd_eval(const json& cfg, const std::string& config_path, const fs::path& out_dir,
             std::vector<double> eps_list, bool require_eps) {
    avt::Dataset ds = load_dataset(cfg.at("dataset"));
    if (eps_list.empty() && cfg.contains("eps_list"))
        eps_list = cfg.at("eps_list").get<std::vector<double>>();
    if (eps_list.empty()) {
        if (require_eps) throw avt::ConfigError("certify: an eps list is required (--eps)");
        eps_list = {0.0};
    }

    std::optional<avt::GroupPartition> partition;
    if (cfg.contains("partition")) partition = parse_partition(cfg.at("partition"));

    std::string model_path = jget_or<std::string>(cfg, "model", "");
    std::string ndt_path = jget_or<std::string>(cfg, "ndt", "");
    if (model_path.empty() == ndt_path.empty())
        throw avt::ConfigError("config: exactly one of 'model' or 'ndt' is required");

    std::optional<double> eps_intra;
    if (cfg.contains("eps_intra")) eps_intra = cfg.at("eps_intra").get<double>();

    fs::create_directories(out_dir);
    Manifest m;
    m.command = require_eps ? "certify" : "eval";
    m.config = cfg;
    m.add_input(config_path);

    if (!model_path.empty()) {
        avt::Network net = avt::load_network(model_path);
        if (partition && partition->n_classes() != net.n_classes)
            throw avt::ConfigError("config: partition does not cover the model's classes");
        m.add_input(model_path);
        for (double eps : eps_list) {
            avt::MetricsReport r =
                avt::evaluate_network(net, ds, partition ? &*partition : nullptr, eps, eps_intra);
            std::ostringstream name;
            name << "report_eps" << eps << ".json";
            write_text(out_dir / name.str(), avt::report_to_json_text(r) + "\n");
            m.outputs.push_back(name.str());
            std::cout << avt::report_to_table(r);
        }
    } else {
        avt::Ndt ndt = avt::load_ndt(ndt_path);
        m.add_input((fs::path(ndt_path) / "ndt.json").string());
        for (double eps : eps_list) {
            avt::MetricsReport r = avt::evaluate_ndt(ndt, ds, eps);
            std::ostringstream name;
            name << "report_eps" << eps << ".json";
            write_text(out_dir / name.str(), avt::report_to_json_text(r) + "\n");
            m.outputs.push_back(name.str());
            std::cout << avt::report_to_table(r);
        }
    }
    m.write(out_dir);
    return 0;
}

int cmd_synth(const json& cfg, const std::string& config_path, const fs::path& out_dir) {
    avt::BlobSpec spec = avt::blob_spec_from_json_text(cfg.dump());
    avt::Dataset ds = avt::synth_blobs(spec);
    fs::create_directories(out_dir);
    avt::save_idx(ds, (out_dir / "images.idx").string(), (out_dir / "labels.idx").string());
    Manifest m;
    m.command = "synth";
    m.config = cfg;
    m.add_input(config_path);
    m.outputs = {"images.idx", "labels.idx"};
    m.write(out_dir);
    std::cout << "wrote " << ds.size() << " samples\n";
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"verifiable training with similarity-grouped robustness criteria"};
    app.require_subcommand(1);

    std::string config_path, out_dir = "run", model_path, tree_out;
    std::uint64_t seed = 0;
    bool seed_set = false;
    int threads = 1;
    std::vector<double> eps_list;

    app.add_option("--threads", threads, "worker threads (1 keeps runs bit-deterministic)");

    auto* cluster = app.add_subcommand("cluster", "dendrogram from a trained model's head weights");
    cluster->add_option("model", model_path, "model file")->required();
    cluster->add_option("out", tree_out, "output tree JSON path")->required();

    auto* train_cmd = app.add_subcommand("train", "train a single model");
    train_cmd->add_option("--config", config_path, "JSON config")->required();
    train_cmd->add_option("--out", out_dir, "output directory");
    train_cmd->add_option("--seed", seed, "override config seed")->each([&](const std::string&) {
        seed_set = true;
    });

    auto* ndt_cmd = app.add_subcommand("train-ndt", "train a routing tree of classifiers");
    ndt_cmd->add_option("--config", config_path, "JSON config")->required();
    ndt_cmd->add_option("--out", out_dir, "output directory");
    ndt_cmd->add_option("--seed", seed, "override config seed")->each([&](const std::string&) {
        seed_set = true;
    });

    auto* eval_cmd = app.add_subcommand("eval", "metrics report for a model or tree");
    eval_cmd->add_option("--config", config_path, "JSON config")->required();
    eval_cmd->add_option("--out", out_dir, "output directory");
    eval_cmd->add_option("--eps", eps_list, "evaluation radii");

    auto* certify_cmd = app.add_subcommand("certify", "eval with a required eps list");
    certify_cmd->add_option("--config", config_path, "JSON config")->required();
    certify_cmd->add_option("--out", out_dir, "output directory");
    certify_cmd->add_option("--eps", eps_list, "certification radii");

    auto* synth_cmd = app.add_subcommand("synth", "write a synthetic blob dataset in IDX layout");
    synth_cmd->add_option("--config", config_path, "blob spec JSON")->required();
    synth_cmd->add_option("--out", out_dir, "output directory");

    CLI11_PARSE(app, argc, argv);

    try {
        avt::set_num_threads(threads);
        if (cluster->parsed()) return cmd_cluster(model_path, tree_out);

        json cfg = parse_config_file(config_path);
        if (seed_set) {
            if (cfg.contains("train")) cfg["train"]["seed"] = seed;
            cfg["seed"] = seed;
        }
        if (train_cmd->parsed()) return cmd_train(cfg, config_path, out_dir);
        if (ndt_cmd->parsed()) return cmd_train_ndt(cfg, config_path, out_dir);
        if (eval_cmd->parsed()) return cmd_eval(cfg, config_path, out_dir, eps_list, false);
        if (certify_cmd->parsed()) return cmd_eval(cfg, config_path, out_dir, eps_list, true);
        if (synth_cmd->parsed()) return cmd_synth(cfg, config_path, out_dir);
        return 1;
    } catch (const avt::ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const avt::NumericError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
