#pragma once

#include "avt/bounds.hpp"
#include "avt/groups.hpp"
#include "avt/network.hpp"
#include "avt/train.hpp"

#include <memory>
#include <string>
#include <vector>

namespace avt {

enum class NdtVariant { kFull, kMixed, kTruncatedMixed };

// Tree-of-classifiers layout before any training. Each internal node splits
// its class set into child groups; a singleton child group terminates routing.
struct PlanNode {
    std::vector<int> classes;
    std::vector<std::vector<int>> child_groups;
    std::vector<std::unique_ptr<PlanNode>> children; // nullptr for singleton children
    double eps = 0.0;                                // 0 means natural training
    int depth = 0;
};

struct NdtPlan {
    std::unique_ptr<PlanNode> root;
    NdtVariant variant = NdtVariant::kFull;
    int max_depth = 0; // truncated-mixed cut depth
    ArchSpec arch;
};

// Full: binary mirror of the dendrogram, uniform radius eps_table[0].
// Mixed: binary mirror, robust root, natural descendants.
// TruncatedMixed(d): robust binary nodes above depth d, each depth-d subtree
// collapsed into one natural multi-way classifier over its classes.
NdtPlan build_plan(const ClusterTree& tree, NdtVariant variant, const std::vector<double>& eps_table,
                   const ArchSpec& arch, int max_depth = 1);

struct NdtNode {
    Network net; // outputs = child count
    std::vector<std::vector<int>> child_groups;
    std::vector<std::unique_ptr<NdtNode>> children;
    double eps = 0.0;
    int depth = 0;

    bool is_binary() const { return child_groups.size() == 2; }
};

struct Ndt {
    std::unique_ptr<NdtNode> root;
    NdtVariant variant = NdtVariant::kFull;
    int max_depth = 0;
};

// Trains every node on the samples whose labels fall in its class set, with
// labels remapped to child-group indices; robust nodes (eps > 0) use the
// worst-case margin loss at their radius. Node order is pre-order and each
// node's seed derives from (config seed, node path), so a shared prefix of
// two plans trains identically. With finetune_base, nodes start from
// clone_for_head(base). natural_config, when given, replaces base_config for
// eps = 0 nodes (they need neither the warmup nor the epsilon ramp budget).
Ndt train_ndt(const NdtPlan& plan, const Dataset& dataset, const TrainConfig& base_config,
              const Network* finetune_base = nullptr, const TrainConfig* natural_config = nullptr);

// Routes by argmax at each node (ties toward the lower child index) until a
// singleton child group is reached.
int ndt_predict(const Ndt& ndt, const Tensor& x);

// Certification of the root's binary group decision.
Verdict certify_root(const Ndt& ndt, const Tensor& x, int true_group, double eps);

// The root's two child groups as a partition of the full class set.
GroupPartition root_partition(const Ndt& ndt);

// Directory layout: ndt.json manifest plus one model file per node.
void save_ndt(const Ndt& ndt, const std::string& dir);
Ndt load_ndt(const std::string& dir);

} // namespace avt
