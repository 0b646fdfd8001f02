#pragma once

#include "avt/tensor.hpp"

#include <map>
#include <string>
#include <vector>

namespace avt {

// Assignment of classes to dense group ids 0..n_groups-1. A partition may
// cover the full class set (top-level split) or a subtree's class subset.
struct GroupPartition {
    std::map<int, int> group_of;
    int n_groups = 0;

    static GroupPartition from_groups(const std::vector<std::vector<int>>& groups);
    std::vector<std::vector<int>> groups() const;

    bool covers(int cls) const { return group_of.count(cls) != 0; }
    int group(int cls) const;
    int n_classes() const { return static_cast<int>(group_of.size()); }
};

// Binary merge tree over classes. Leaves are nodes 0..n_classes-1 (leaf i is
// class i); internal nodes are appended in merge order, so the root is last
// and merge distances are non-decreasing toward it.
struct ClusterNode {
    std::vector<int> classes; // sorted
    double dist = 0.0;        // merge distance, 0 for leaves
    int left = -1;
    int right = -1;
    int cls = -1;             // leaf class, -1 for internal nodes
};

struct ClusterTree {
    std::vector<ClusterNode> nodes;
    int n_classes = 0;

    int root() const { return static_cast<int>(nodes.size()) - 1; }
    bool is_leaf(int id) const { return nodes[static_cast<std::size_t>(id)].cls >= 0; }
};

enum class Linkage { kAverage, kWard };

// Full dendrogram from one weight row per class (Euclidean metric). Ties are
// broken toward the lexicographically smallest (min class of A, min class of
// B) pair, so the result is deterministic.
ClusterTree agglomerative_cluster(const Tensor& class_weights, Linkage linkage = Linkage::kAverage);

// The two class groups under the dendrogram root (the most dissimilar split).
GroupPartition top_level_split(const ClusterTree& tree);

// Partition of an internal node's class set into its two children.
GroupPartition partition_at(const ClusterTree& tree, int node_id);

// Per-true-label comparison matrix: row i encodes "logit of y minus logit of
// i". Entries are -1/0/+1 and row y is all zeros.
struct SpecMatrix {
    int n = 0;
    int y = -1;
    std::vector<double> c; // n*n row-major

    double at(int i, int j) const { return c[static_cast<std::size_t>(i) * n + j]; }
    bool row_nonzero(int i) const;
    Tensor as_tensor() const { return Tensor({n, n}, c); }
};

SpecMatrix spec_standard(int y, int n_classes);
// Rows only for classes outside y's group; in-group rows zeroed out.
SpecMatrix spec_outer(int y, const GroupPartition& partition, int n_classes);
// Rows only for classes inside y's group; out-group rows zeroed out.
SpecMatrix spec_inner(int y, const GroupPartition& partition, int n_classes);

std::string cluster_tree_to_json_text(const ClusterTree& tree);
ClusterTree cluster_tree_from_json_text(const std::string& text);
std::string partition_to_json_text(const GroupPartition& p);
GroupPartition partition_from_json_text(const std::string& text);

// Plain-text dendrogram for terminal output.
std::string render_dendrogram(const ClusterTree& tree);

} // namespace avt
