#include "avt/ndt.hpp"

#include "avt/errors.hpp"
#include "avt/rng.hpp"

#include <json.hpp>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace avt {

namespace {

double eps_at_depth(const std::vector<double>& table, int depth) {
    if (table.empty()) throw ConfigError("ndt: empty eps table");
    return table[static_cast<std::size_t>(std::min<int>(depth, static_cast<int>(table.size()) - 1))];
}

void check_table(const std::vector<double>& table) {
    for (std::size_t i = 0; i + 1 < table.size(); ++i)
        if (table[i + 1] > table[i])
            throw ConfigError("ndt: eps table must be non-increasing in depth");
    for (double e : table)
        if (e < 0.0) throw ConfigError("ndt: negative eps");
}

std::unique_ptr<PlanNode> mirror_node(const ClusterTree& tree, int id, NdtVariant variant,
                                      const std::vector<double>& table, int depth, int max_depth) {
    const ClusterNode& cn = tree.nodes[static_cast<std::size_t>(id)];
    auto node = std::make_unique<PlanNode>();
    node->classes = cn.classes;
    node->depth = depth;

    const bool collapse = variant == NdtVariant::kTruncatedMixed && depth >= max_depth;
    if (collapse) {
        // flat natural multi-way classifier over the subtree's classes
        node->eps = 0.0;
        for (int c : cn.classes) node->child_groups.push_back({c});
        node->children.resize(cn.classes.size());
        return node;
    }

    switch (variant) {
        case NdtVariant::kFull:
            node->eps = table[0];
            break;
        case NdtVariant::kMixed:
            node->eps = depth == 0 ? table[0] : 0.0;
            break;
        case NdtVariant::kTruncatedMixed:
            node->eps = eps_at_depth(table, depth);
            break;
    }

    for (int child_id : {cn.left, cn.right}) {
        const ClusterNode& cc = tree.nodes[static_cast<std::size_t>(child_id)];
        node->child_groups.push_back(cc.classes);
        if (cc.cls >= 0)
            node->children.push_back(nullptr);
        else
            node->children.push_back(mirror_node(tree, child_id, variant, table, depth + 1, max_depth));
    }
    return node;
}

void validate_monotone(const PlanNode& node) {
    for (const auto& ch : node.children) {
        if (!ch) continue;
        if (ch->eps > node.eps)
            throw ConfigError("ndt: child node is more robust than its parent");
        validate_monotone(*ch);
    }
}

std::string classes_to_string(const std::vector<int>& classes) {
    std::ostringstream s;
    s << "{";
    for (std::size_t i = 0; i < classes.size(); ++i) s << (i ? "," : "") << classes[i];
    s << "}";
    return s.str();
}

std::unique_ptr<NdtNode> train_node(const PlanNode& plan, const Dataset& ds,
                                    const TrainConfig& base_config, const ArchSpec& arch,
                                    const Network* finetune_base, const TrainConfig* natural_config,
                                    std::uint64_t path_seed) {
    auto node = std::make_unique<NdtNode>();
    node->child_groups = plan.child_groups;
    node->eps = plan.eps;
    node->depth = plan.depth;

    // samples whose labels fall under this node, remapped to child indices
    std::vector<int> cls_to_child(static_cast<std::size_t>(ds.n_classes), -1);
    for (std::size_t g = 0; g < plan.child_groups.size(); ++g)
        for (int c : plan.child_groups[g]) cls_to_child[static_cast<std::size_t>(c)] = static_cast<int>(g);
    Dataset sub;
    sub.sample_shape = ds.sample_shape;
    sub.n_classes = static_cast<int>(plan.child_groups.size());
    sub.name = ds.name + ":" + classes_to_string(plan.classes);
    for (std::size_t i = 0; i < ds.size(); ++i) {
        int child = cls_to_child[static_cast<std::size_t>(ds.labels[i])];
        if (child < 0) continue;
        sub.inputs.push_back(ds.inputs[i]);
        sub.labels.push_back(child);
    }
    if (sub.size() == 0)
        throw Error("ndt: node over classes " + classes_to_string(plan.classes) + " has zero samples");

    const std::uint64_t node_seed = mix_seed(base_config.seed, path_seed);
    Network net = finetune_base
                      ? clone_for_head(*finetune_base, sub.n_classes, node_seed)
                      : build_network(arch, ds.sample_shape, sub.n_classes, node_seed, &ds);

    TrainConfig cfg = plan.eps == 0.0 && natural_config ? *natural_config : base_config;
    cfg.seed = node_seed;
    cfg.loss = plan.eps > 0.0 ? LossMode::robust(plan.eps) : LossMode::natural();
    if (plan.eps == 0.0) {
        // natural nodes do not need the robust ramp
        cfg.schedule.natural_warmup_epochs = 0;
        cfg.schedule.ramp_epochs = 0;
    }
    node->net = train(std::move(net), sub, cfg).net;

    node->children.resize(plan.children.size());
    for (std::size_t i = 0; i < plan.children.size(); ++i) {
        if (plan.children[i])
            node->children[i] = train_node(*plan.children[i], ds, base_config, arch, finetune_base,
                                           natural_config,
                                           mix_seed(path_seed, static_cast<std::uint64_t>(i) + 1));
    }
    return node;
}

} // namespace

NdtPlan build_plan(const ClusterTree& tree, NdtVariant variant, const std::vector<double>& eps_table,
                   const ArchSpec& arch, int max_depth) {
    check_table(eps_table);
    if (variant == NdtVariant::kTruncatedMixed && max_depth < 1)
        throw ConfigError("ndt: truncated-mixed needs max_depth >= 1");
    NdtPlan plan;
    plan.variant = variant;
    plan.max_depth = variant == NdtVariant::kTruncatedMixed ? max_depth : 0;
    plan.arch = arch;
    plan.root = mirror_node(tree, tree.root(), variant, eps_table, 0, max_depth);
    validate_monotone(*plan.root);
    return plan;
}

Ndt train_ndt(const NdtPlan& plan, const Dataset& dataset, const TrainConfig& base_config,
              const Network* finetune_base, const TrainConfig* natural_config) {
    if (!plan.root) throw ConfigError("ndt: empty plan");
    for (int c : plan.root->classes)
        if (c >= dataset.n_classes)
            throw ConfigError("ndt: plan covers class " + std::to_string(c) +
                              " beyond the dataset's classes");
    Ndt ndt;
    ndt.variant = plan.variant;
    ndt.max_depth = plan.max_depth;
    ndt.root = train_node(*plan.root, dataset, base_config, plan.arch, finetune_base,
                          natural_config, 0);
    return ndt;
}

int ndt_predict(const Ndt& ndt, const Tensor& x) {
    const NdtNode* node = ndt.root.get();
    for (;;) {
        Tensor logits = forward(node->net, x);
        int best = 0;
        for (int j = 1; j < static_cast<int>(logits.v.size()); ++j)
            if (logits.v[static_cast<std::size_t>(j)] > logits.v[static_cast<std::size_t>(best)])
                best = j;
        const NdtNode* child = node->children[static_cast<std::size_t>(best)].get();
        if (!child) return node->child_groups[static_cast<std::size_t>(best)][0];
        node = child;
    }
}

Verdict certify_root(const Ndt& ndt, const Tensor& x, int true_group, double eps) {
    if (!ndt.root->is_binary()) throw ConfigError("certify_root: root is not binary");
    if (true_group < 0 || true_group > 1) throw ConfigError("certify_root: group must be 0 or 1");
    return verify_sample(ndt.root->net, x, true_group, eps, spec_standard(true_group, 2));
}

GroupPartition root_partition(const Ndt& ndt) {
    return GroupPartition::from_groups(ndt.root->child_groups);
}

namespace {

using nlohmann::ordered_json;

ordered_json node_to_json(const NdtNode& node, int& counter, const std::string& dir) {
    ordered_json j;
    const std::string model_file = "node_" + std::to_string(counter++) + ".json";
    save_network(node.net, (std::filesystem::path(dir) / model_file).string());
    j["eps"] = node.eps;
    j["depth"] = node.depth;
    j["child_groups"] = node.child_groups;
    j["model"] = model_file;
    ordered_json children = ordered_json::array();
    for (std::size_t i = 0; i < node.children.size(); ++i) {
        if (node.children[i])
            children.push_back(node_to_json(*node.children[i], counter, dir));
        else
            children.push_back(ordered_json{{"leaf", node.child_groups[i][0]}});
    }
    j["children"] = std::move(children);
    return j;
}

std::unique_ptr<NdtNode> node_from_json(const nlohmann::json& j, const std::string& dir) {
    auto node = std::make_unique<NdtNode>();
    node->eps = j.at("eps").get<double>();
    node->depth = j.at("depth").get<int>();
    node->child_groups = j.at("child_groups").get<std::vector<std::vector<int>>>();
    node->net = load_network((std::filesystem::path(dir) / j.at("model").get<std::string>()).string());
    const auto& ch = j.at("children");
    if (ch.size() != node->child_groups.size())
        throw FormatError("ndt manifest: children do not match child groups");
    for (const auto& c : ch) {
        if (c.contains("leaf")) {
            node->children.push_back(nullptr);
        } else {
            node->children.push_back(node_from_json(c, dir));
        }
    }
    if (node->net.n_classes != static_cast<int>(node->child_groups.size()))
        throw FormatError("ndt manifest: node output arity does not match its child groups");
    return node;
}

std::string variant_name(NdtVariant v) {
    switch (v) {
        case NdtVariant::kFull: return "full";
        case NdtVariant::kMixed: return "mixed";
        case NdtVariant::kTruncatedMixed: return "truncated-mixed";
    }
    return "full";
}

NdtVariant variant_from_name(const std::string& s) {
    if (s == "full") return NdtVariant::kFull;
    if (s == "mixed") return NdtVariant::kMixed;
    if (s == "truncated-mixed") return NdtVariant::kTruncatedMixed;
    throw FormatError("ndt manifest: unknown variant '" + s + "'");
}

} // namespace

void save_ndt(const Ndt& ndt, const std::string& dir) {
    std::filesystem::create_directories(dir);
    int counter = 0;
    ordered_json j;
    j["format_version"] = 1;
    j["variant"] = variant_name(ndt.variant);
    j["max_depth"] = ndt.max_depth;
    j["root"] = node_to_json(*ndt.root, counter, dir);
    std::ofstream out(std::filesystem::path(dir) / "ndt.json", std::ios::binary);
    if (!out) throw Error(dir + ": cannot write ndt.json");
    out << j.dump(1) << "\n";
    if (!out) throw Error(dir + ": write failed");
}

Ndt load_ndt(const std::string& dir) {
    std::ifstream in(std::filesystem::path(dir) / "ndt.json", std::ios::binary);
    if (!in) throw Error(dir + ": cannot open ndt.json");
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(dir + "/ndt.json: invalid JSON: " + e.what());
    }
    try {
        Ndt ndt;
        ndt.variant = variant_from_name(j.at("variant").get<std::string>());
        ndt.max_depth = j.value("max_depth", 0);
        ndt.root = node_from_json(j.at("root"), dir);
        return ndt;
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(dir + "/ndt.json: " + e.what());
    }
}

} // namespace avt
