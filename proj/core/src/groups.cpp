#include "avt/groups.hpp"

#include "avt/errors.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <sstream>

namespace avt {

namespace {

double euclid(const Tensor& w, int a, int b) {
    double s = 0.0;
    for (int j = 0; j < w.cols(); ++j) {
        double d = w.at(a, j) - w.at(b, j);
        s += d * d;
    }
    return std::sqrt(s);
}

} // namespace

GroupPartition GroupPartition::from_groups(const std::vector<std::vector<int>>& groups) {
    GroupPartition p;
    for (std::size_t g = 0; g < groups.size(); ++g) {
        if (groups[g].empty()) throw ConfigError("partition: empty group");
        for (int cls : groups[g]) {
            if (p.group_of.count(cls)) throw ConfigError("partition: class appears twice");
            p.group_of[cls] = static_cast<int>(g);
        }
    }
    p.n_groups = static_cast<int>(groups.size());
    if (p.n_groups < 1) throw ConfigError("partition: need at least one group");
    return p;
}

std::vector<std::vector<int>> GroupPartition::groups() const {
    std::vector<std::vector<int>> out(static_cast<std::size_t>(n_groups));
    for (const auto& [cls, g] : group_of) out[static_cast<std::size_t>(g)].push_back(cls);
    return out;
}

int GroupPartition::group(int cls) const {
    auto it = group_of.find(cls);
    if (it == group_of.end())
        throw ConfigError("partition does not cover class " + std::to_string(cls));
    return it->second;
}

ClusterTree agglomerative_cluster(const Tensor& class_weights, Linkage linkage) {
    if (class_weights.rank() != 2) throw ShapeError("cluster: weights must be [n_classes, d]");
    const int n = class_weights.rows();
    if (n < 2) throw ConfigError("cluster: need at least 2 classes");

    ClusterTree tree;
    tree.n_classes = n;
    for (int i = 0; i < n; ++i) {
        ClusterNode leaf;
        leaf.classes = {i};
        leaf.cls = i;
        tree.nodes.push_back(std::move(leaf));
    }

    struct Active {
        int node_id;
        int min_class;
        int size;
    };
    std::vector<Active> act;
    for (int i = 0; i < n; ++i) act.push_back({i, i, 1});

    // pairwise distance matrix over active clusters, updated by Lance-Williams
    std::vector<std::vector<double>> dist(static_cast<std::size_t>(n),
                                          std::vector<double>(static_cast<std::size_t>(n), 0.0));
    for (int a = 0; a < n; ++a)
        for (int b = a + 1; b < n; ++b) dist[static_cast<std::size_t>(a)][static_cast<std::size_t>(b)] =
            dist[static_cast<std::size_t>(b)][static_cast<std::size_t>(a)] = euclid(class_weights, a, b);

    while (act.size() > 1) {
        int best_a = -1, best_b = -1;
        double best_d = 0.0;
        int best_p = 0, best_q = 0;
        for (std::size_t i = 0; i < act.size(); ++i) {
            for (std::size_t j = i + 1; j < act.size(); ++j) {
                double d = dist[i][j];
                int p = std::min(act[i].min_class, act[j].min_class);
                int q = std::max(act[i].min_class, act[j].min_class);
                if (best_a < 0 || d < best_d || (d == best_d && (p < best_p || (p == best_p && q < best_q)))) {
                    best_a = static_cast<int>(i);
                    best_b = static_cast<int>(j);
                    best_d = d;
                    best_p = p;
                    best_q = q;
                }
            }
        }

        const Active& ca = act[static_cast<std::size_t>(best_a)];
        const Active& cb = act[static_cast<std::size_t>(best_b)];
        ClusterNode merged;
        // child with the smaller min class goes left
        if (ca.min_class <= cb.min_class) {
            merged.left = ca.node_id;
            merged.right = cb.node_id;
        } else {
            merged.left = cb.node_id;
            merged.right = ca.node_id;
        }
        merged.dist = best_d;
        const auto& la = tree.nodes[static_cast<std::size_t>(ca.node_id)].classes;
        const auto& lb = tree.nodes[static_cast<std::size_t>(cb.node_id)].classes;
        std::merge(la.begin(), la.end(), lb.begin(), lb.end(), std::back_inserter(merged.classes));
        int new_id = static_cast<int>(tree.nodes.size());
        tree.nodes.push_back(std::move(merged));

        // Lance-Williams update for the surviving cluster distances
        const int sa = ca.size, sb = cb.size;
        std::vector<std::vector<double>> nd;
        std::vector<Active> nact;
        for (std::size_t i = 0; i < act.size(); ++i) {
            if (static_cast<int>(i) == best_a || static_cast<int>(i) == best_b) continue;
            nact.push_back(act[i]);
        }
        Active na{new_id, std::min(ca.min_class, cb.min_class), sa + sb};
        nact.push_back(na);
        nd.assign(nact.size(), std::vector<double>(nact.size(), 0.0));
        std::vector<std::size_t> old_idx;
        for (std::size_t i = 0; i < act.size(); ++i)
            if (static_cast<int>(i) != best_a && static_cast<int>(i) != best_b) old_idx.push_back(i);
        for (std::size_t i = 0; i < old_idx.size(); ++i)
            for (std::size_t j = i + 1; j < old_idx.size(); ++j)
                nd[i][j] = nd[j][i] = dist[old_idx[i]][old_idx[j]];
        for (std::size_t i = 0; i < old_idx.size(); ++i) {
            double dac = dist[old_idx[i]][static_cast<std::size_t>(best_a)];
            double dbc = dist[old_idx[i]][static_cast<std::size_t>(best_b)];
            double d;
            if (linkage == Linkage::kAverage) {
                d = (sa * dac + sb * dbc) / (sa + sb);
            } else { // Ward
                int sc = nact[i].size;
                double dab = best_d;
                d = std::sqrt(((sa + sc) * dac * dac + (sb + sc) * dbc * dbc - sc * dab * dab) /
                              (sa + sb + sc));
            }
            nd[i][nact.size() - 1] = nd[nact.size() - 1][i] = d;
        }
        act = std::move(nact);
        dist = std::move(nd);
    }
    return tree;
}

GroupPartition top_level_split(const ClusterTree& tree) { return partition_at(tree, tree.root()); }

GroupPartition partition_at(const ClusterTree& tree, int node_id) {
    if (node_id < 0 || node_id >= static_cast<int>(tree.nodes.size()))
        throw ConfigError("partition_at: node id out of range");
    const ClusterNode& node = tree.nodes[static_cast<std::size_t>(node_id)];
    if (node.cls >= 0) throw ConfigError("partition_at: leaf node has no split");
    return GroupPartition::from_groups({tree.nodes[static_cast<std::size_t>(node.left)].classes,
                                        tree.nodes[static_cast<std::size_t>(node.right)].classes});
}

bool SpecMatrix::row_nonzero(int i) const {
    for (int j = 0; j < n; ++j)
        if (at(i, j) != 0.0) return true;
    return false;
}

SpecMatrix spec_standard(int y, int n_classes) {
    if (y < 0 || y >= n_classes) throw ConfigError("spec matrix: label out of range");
    SpecMatrix s;
    s.n = n_classes;
    s.y = y;
    s.c.assign(static_cast<std::size_t>(n_classes) * n_classes, 0.0);
    for (int i = 0; i < n_classes; ++i) {
        if (i == y) continue;
        s.c[static_cast<std::size_t>(i) * n_classes + y] = 1.0;
        s.c[static_cast<std::size_t>(i) * n_classes + i] = -1.0;
    }
    return s;
}

SpecMatrix spec_outer(int y, const GroupPartition& partition, int n_classes) {
    SpecMatrix s = spec_standard(y, n_classes);
    int gy = partition.group(y);
    for (int i = 0; i < n_classes; ++i) {
        if (i == y) continue;
        if (partition.group(i) == gy) {
            s.c[static_cast<std::size_t>(i) * n_classes + y] = 0.0;
            s.c[static_cast<std::size_t>(i) * n_classes + i] = 0.0;
        }
    }
    return s;
}

SpecMatrix spec_inner(int y, const GroupPartition& partition, int n_classes) {
    SpecMatrix s = spec_standard(y, n_classes);
    int gy = partition.group(y);
    for (int i = 0; i < n_classes; ++i) {
        if (i == y) continue;
        if (partition.group(i) != gy) {
            s.c[static_cast<std::size_t>(i) * n_classes + y] = 0.0;
            s.c[static_cast<std::size_t>(i) * n_classes + i] = 0.0;
        }
    }
    return s;
}

namespace {

nlohmann::ordered_json node_to_json(const ClusterTree& tree, int id) {
    const ClusterNode& n = tree.nodes[static_cast<std::size_t>(id)];
    nlohmann::ordered_json j;
    if (n.cls >= 0) {
        j["class"] = n.cls;
    } else {
        j["dist"] = n.dist;
        j["classes"] = n.classes;
        j["children"] = nlohmann::ordered_json::array(
            {node_to_json(tree, n.left), node_to_json(tree, n.right)});
    }
    return j;
}

int node_from_json(const nlohmann::json& j, ClusterTree& tree, std::vector<int>& leaf_ids) {
    if (j.contains("class")) {
        int cls = j.at("class").get<int>();
        if (cls < 0 || cls >= static_cast<int>(leaf_ids.size()) || leaf_ids[static_cast<std::size_t>(cls)] < 0)
            throw FormatError("cluster tree: bad or duplicate leaf class");
        int id = leaf_ids[static_cast<std::size_t>(cls)];
        leaf_ids[static_cast<std::size_t>(cls)] = -1;
        return id;
    }
    const auto& ch = j.at("children");
    if (ch.size() != 2) throw FormatError("cluster tree: internal node needs two children");
    int l = node_from_json(ch[0], tree, leaf_ids);
    int r = node_from_json(ch[1], tree, leaf_ids);
    ClusterNode node;
    node.dist = j.at("dist").get<double>();
    node.left = l;
    node.right = r;
    const auto& lc = tree.nodes[static_cast<std::size_t>(l)].classes;
    const auto& rc = tree.nodes[static_cast<std::size_t>(r)].classes;
    std::merge(lc.begin(), lc.end(), rc.begin(), rc.end(), std::back_inserter(node.classes));
    tree.nodes.push_back(std::move(node));
    return static_cast<int>(tree.nodes.size()) - 1;
}

void render_node(const ClusterTree& tree, int id, const std::string& prefix, bool last,
                 std::ostringstream& out) {
    const ClusterNode& n = tree.nodes[static_cast<std::size_t>(id)];
    out << prefix;
    if (!prefix.empty()) out << (last ? "`-- " : "|-- ");
    if (n.cls >= 0) {
        out << "class " << n.cls << "\n";
        return;
    }
    out << "merge @ " << n.dist << "\n";
    std::string child_prefix = prefix.empty() ? "    " : prefix + (last ? "    " : "|   ");
    render_node(tree, n.left, child_prefix, false, out);
    render_node(tree, n.right, child_prefix, true, out);
}

} // namespace

std::string cluster_tree_to_json_text(const ClusterTree& tree) {
    nlohmann::ordered_json j;
    j["n_classes"] = tree.n_classes;
    j["root"] = node_to_json(tree, tree.root());
    return j.dump(1);
}

ClusterTree cluster_tree_from_json_text(const std::string& text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("cluster tree: invalid JSON: ") + e.what());
    }
    try {
        ClusterTree tree;
        tree.n_classes = j.at("n_classes").get<int>();
        if (tree.n_classes < 2) throw FormatError("cluster tree: need at least 2 classes");
        std::vector<int> leaf_ids(static_cast<std::size_t>(tree.n_classes));
        for (int i = 0; i < tree.n_classes; ++i) {
            ClusterNode leaf;
            leaf.classes = {i};
            leaf.cls = i;
            tree.nodes.push_back(std::move(leaf));
            leaf_ids[static_cast<std::size_t>(i)] = i;
        }
        int root = node_from_json(j.at("root"), tree, leaf_ids);
        if (root != tree.root() ||
            static_cast<int>(tree.nodes[static_cast<std::size_t>(root)].classes.size()) != tree.n_classes)
            throw FormatError("cluster tree: root does not cover all classes");
        return tree;
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("cluster tree: ") + e.what());
    }
}

std::string partition_to_json_text(const GroupPartition& p) {
    nlohmann::ordered_json j;
    j["groups"] = p.groups();
    return j.dump(1);
}

GroupPartition partition_from_json_text(const std::string& text) {
    try {
        nlohmann::json j = nlohmann::json::parse(text);
        return GroupPartition::from_groups(j.at("groups").get<std::vector<std::vector<int>>>());
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("partition: invalid JSON: ") + e.what());
    }
}

std::string render_dendrogram(const ClusterTree& tree) {
    std::ostringstream out;
    render_node(tree, tree.root(), "", true, out);
    return out.str();
}

} // namespace avt
